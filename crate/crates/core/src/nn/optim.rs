//! SGD and Adam with explicit parameter scoping.
//!
//! Scoped updates are load-bearing for the adversarial alternation: step 1
//! must touch only the domain predictor, step 2 only the tagger.

use super::store::{Grads, ParamId, ParamStore};
use crate::scalar::Scalar;
use ndarray::Array2;
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct Sgd<S: Scalar> {
    pub lr: S,
    /// Global L2-norm clip over the update scope, applied before the step.
    pub clip: Option<S>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(lr: S) -> Self {
        Sgd { lr, clip: None }
    }

    pub fn with_clip(lr: S, clip: S) -> Self {
        Sgd {
            lr,
            clip: Some(clip),
        }
    }

    pub fn step(&self, store: &mut ParamStore<S>, grads: &Grads<S>, scope: &[ParamId]) {
        let mut factor = S::one();
        if let Some(clip) = self.clip {
            let norm = grads.global_norm(scope);
            if norm > clip {
                factor = clip / norm;
            }
        }
        for &id in scope {
            if let Some(g) = grads.get(id) {
                let lr = self.lr;
                let update = g.mapv(|x| x * factor * lr);
                *store.value_mut(id) -= &update;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    t: u64,
    m: HashMap<usize, Array2<S>>,
    v: HashMap<usize, Array2<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: S) -> Self {
        Adam {
            lr,
            beta1: S::of(0.9),
            beta2: S::of(0.999),
            eps: S::of(1e-8),
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Grads<S>, scope: &[ParamId]) {
        self.t += 1;
        let t = S::of(self.t as f64);
        let bc1 = S::one() - self.beta1.powf(t);
        let bc2 = S::one() - self.beta2.powf(t);
        for &id in scope {
            let Some(g) = grads.get(id) else { continue };
            let m = self
                .m
                .entry(id.0)
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(id.0)
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            let (b1, b2) = (self.beta1, self.beta2);
            m.zip_mut_with(g, |mi, &gi| *mi = b1 * *mi + (S::one() - b1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = b2 * *vi + (S::one() - b2) * gi * gi);
            let lr = self.lr;
            let eps = self.eps;
            let mut update = Array2::zeros(g.raw_dim());
            update.zip_mut_with(m, |u, &mi| *u = mi / bc1);
            update.zip_mut_with(v, |u, &vi| *u = lr * *u / ((vi / bc2).sqrt() + eps));
            *store.value_mut(id) -= &update;
        }
    }
}

//! LSTM cell and bidirectional runner built on the tape.

use super::init::xavier;
use super::store::{ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use crate::scalar::Scalar;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Gate order: input, forget, output, candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LstmCell {
    pub w_x: [ParamId; 4],
    pub w_h: [ParamId; 4],
    pub b: [ParamId; 4],
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        prefix: &str,
        group: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Self {
        let gate = |store: &mut ParamStore<S>, rng: &mut R, g: &str| {
            let w_x = store.add(&format!("{prefix}.w_x{g}"), group, xavier(rng, input_dim, hidden));
            let w_h = store.add(&format!("{prefix}.w_h{g}"), group, xavier(rng, hidden, hidden));
            // Forget-gate bias starts at 1.
            let bias = if g == "f" { S::one() } else { S::zero() };
            let b = store.add(
                &format!("{prefix}.b{g}"),
                group,
                Array2::from_elem((1, hidden), bias),
            );
            (w_x, w_h, b)
        };
        let (wxi, whi, bi) = gate(store, rng, "i");
        let (wxf, whf, bf) = gate(store, rng, "f");
        let (wxo, who, bo) = gate(store, rng, "o");
        let (wxg, whg, bg) = gate(store, rng, "g");
        LstmCell {
            w_x: [wxi, wxf, wxo, wxg],
            w_h: [whi, whf, who, whg],
            b: [bi, bf, bo, bg],
            input_dim,
            hidden,
        }
    }

    /// One timestep; `x` is B×input, `h`/`c` are B×hidden. Returns (h', c').
    pub fn step<S: Scalar>(
        &self,
        t: &mut Tape<'_, S>,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> (NodeId, NodeId) {
        let pre = |t: &mut Tape<'_, S>, k: usize| {
            let wx = t.param(self.w_x[k]);
            let wh = t.param(self.w_h[k]);
            let b = t.param(self.b[k]);
            let xp = t.matmul(x, wx);
            let hp = t.matmul(h, wh);
            let s = t.add(xp, hp);
            t.add_row(s, b)
        };
        let i = pre(t, 0);
        let i = t.sigmoid(i);
        let f = pre(t, 1);
        let f = t.sigmoid(f);
        let o = pre(t, 2);
        let o = t.sigmoid(o);
        let g = pre(t, 3);
        let g = t.tanh(g);
        let fc = t.mul(f, c);
        let ig = t.mul(i, g);
        let c_new = t.add(fc, ig);
        let tc = t.tanh(c_new);
        let h_new = t.mul(o, tc);
        (h_new, c_new)
    }

    /// Runs the cell over a timestep sequence from a zero state, returning
    /// the hidden node at each step.
    pub fn run<S: Scalar>(&self, t: &mut Tape<'_, S>, inputs: &[NodeId]) -> Vec<NodeId> {
        let batch = if inputs.is_empty() {
            1
        } else {
            t.value(inputs[0]).nrows()
        };
        let mut h = t.constant(Array2::zeros((batch, self.hidden)));
        let mut c = t.constant(Array2::zeros((batch, self.hidden)));
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let (nh, nc) = self.step(t, x, h, c);
            h = nh;
            c = nc;
            out.push(h);
        }
        out
    }

    /// As [`run`](Self::run) but from a given initial state; returns the
    /// hidden nodes plus the final (h, c) for stateful unrolling.
    pub fn run_from<S: Scalar>(
        &self,
        t: &mut Tape<'_, S>,
        inputs: &[NodeId],
        h0: NodeId,
        c0: NodeId,
    ) -> (Vec<NodeId>, NodeId, NodeId) {
        let mut h = h0;
        let mut c = c0;
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let (nh, nc) = self.step(t, x, h, c);
            h = nh;
            c = nc;
            out.push(h);
        }
        (out, h, c)
    }
}

/// A single bidirectional layer: forward and backward cells, outputs
/// concatenated per timestep (dimension 2·hidden).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        prefix: &str,
        group: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Self {
        BiLstm {
            fwd: LstmCell::new(store, rng, &format!("{prefix}.fwd"), group, input_dim, hidden),
            bwd: LstmCell::new(store, rng, &format!("{prefix}.bwd"), group, input_dim, hidden),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn run<S: Scalar>(&self, t: &mut Tape<'_, S>, inputs: &[NodeId]) -> Vec<NodeId> {
        let fwd_h = self.fwd.run(t, inputs);
        let rev: Vec<NodeId> = inputs.iter().rev().copied().collect();
        let mut bwd_h = self.bwd.run(t, &rev);
        bwd_h.reverse();
        fwd_h
            .into_iter()
            .zip(bwd_h)
            .map(|(f, b)| t.concat_cols(vec![f, b]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::<f64>::new();
        let cell = LstmCell::new(&mut store, &mut rng, "lstm", "m", 3, 2);
        let head = store.add("head", "m", xavier(&mut rng, 2, 1));
        let xs: Vec<Array2<f64>> = (0..4)
            .map(|_| Array2::from_shape_fn((1, 3), |_| rng.gen_range(-1.0..1.0)))
            .collect();

        let run = |store: &ParamStore<f64>| -> (f64, crate::nn::store::Grads<f64>) {
            let mut t = Tape::new(store);
            let inputs: Vec<NodeId> = xs.iter().map(|x| t.constant(x.clone())).collect();
            let hs = cell.run(&mut t, &inputs);
            let all = t.concat_rows(hs);
            let hn = t.param(head);
            let z = t.matmul(all, hn);
            let loss = t.bce_logits(z, vec![1.0, 0.0, 1.0, 1.0], vec![1.0; 4]);
            let g = t.backward(loss);
            (t.value(loss)[(0, 0)], g)
        };

        let (_, grads) = run(&store);
        // spot-check a few parameters numerically
        let eps = 1e-6;
        for name in ["lstm.w_xi", "lstm.w_hf", "lstm.bg", "head"] {
            let id = store.id_by_name(name).unwrap();
            let analytic = grads.get(id).unwrap().clone();
            for idx in [0usize, analytic.len() - 1] {
                let (r, c) = (idx / analytic.ncols(), idx % analytic.ncols());
                let orig = store.value(id)[(r, c)];
                store.value_mut(id)[(r, c)] = orig + eps;
                let up = run(&store).0;
                store.value_mut(id)[(r, c)] = orig - eps;
                let down = run(&store).0;
                store.value_mut(id)[(r, c)] = orig;
                let numeric = (up - down) / (2.0 * eps);
                assert!(
                    (analytic[(r, c)] - numeric).abs() < 1e-6,
                    "{name}[{r},{c}]: {} vs {numeric}",
                    analytic[(r, c)]
                );
            }
        }
    }

    #[test]
    fn bilstm_output_shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let bi = BiLstm::new(&mut store, &mut rng, "bi", "m", 3, 4);
        let xs: Vec<Array2<f64>> = (0..5)
            .map(|_| Array2::from_shape_fn((1, 3), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let run = |store: &ParamStore<f64>| -> Vec<Array2<f64>> {
            let mut t = Tape::new(store);
            let inputs: Vec<NodeId> = xs.iter().map(|x| t.constant(x.clone())).collect();
            bi.run(&mut t, &inputs)
                .into_iter()
                .map(|h| t.value(h).clone())
                .collect()
        };
        let a = run(&store);
        let b = run(&store);
        assert_eq!(a.len(), 5);
        assert_eq!(a[0].dim(), (1, 8));
        assert_eq!(a, b);
    }
}

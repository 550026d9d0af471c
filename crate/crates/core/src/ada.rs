//! Adversarial domain adaptation.
//!
//! A domain predictor D is trained to tell source from target sequences
//! while the tagger's representation pathway R is trained to fool it. The
//! alternation is implemented with two explicitly scoped optimizers rather
//! than a gradient-reversal layer: step 1 updates only D on the domain
//! prediction loss; step 2 updates only R and E on
//! (event loss) − λ·(domain loss) with D frozen.

use crate::nn::init::{dropout_mask, xavier, zeros};
use crate::nn::optim::Adam;
use crate::nn::store::{Grads, ParamId, ParamStore};
use crate::nn::tape::{NodeId, Tape};
use crate::scalar::Scalar;
use crate::tagger::{eval_f1, TaggerModel, TrainItem};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Parameter group for the domain predictor, disjoint from R and E.
pub const GROUP_DOMAIN: &str = "D";

/// λ search grid.
pub const LAMBDA_GRID: [f64; 4] = [0.5, 1.0, 2.0, 5.0];

#[derive(Debug, thiserror::Error)]
pub enum AdaError {
    #[error("adversarial step requires non-empty source and target batches")]
    EmptyBatch,
    #[error("loss became non-finite (lambda {lambda}, epoch {epoch})")]
    NonFiniteLoss { lambda: f64, epoch: usize },
    #[error("lambda grid is empty")]
    EmptyGrid,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Mean over token vectors: the pooled sequence representation fed to D.
pub fn pool_sequence<S: Scalar>(t: &mut Tape<'_, S>, token_reprs: NodeId) -> NodeId {
    assert!(t.value(token_reprs).nrows() > 0, "empty representation");
    t.mean_rows(token_reprs)
}

/// 3-layer MLP with ReLU activations and a binary (source vs. target)
/// logit output, over the pooled sequence representation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainPredictor {
    w: [ParamId; 3],
    b: [ParamId; 3],
    pub input_dim: usize,
    pub hidden: usize,
}

impl DomainPredictor {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        input_dim: usize,
        hidden: usize,
    ) -> Self {
        let dims = [(input_dim, hidden), (hidden, hidden), (hidden, 1)];
        let mut w = Vec::new();
        let mut b = Vec::new();
        for (i, &(din, dout)) in dims.iter().enumerate() {
            w.push(store.add(&format!("domain.w{i}"), GROUP_DOMAIN, xavier(rng, din, dout)));
            b.push(store.add(&format!("domain.b{i}"), GROUP_DOMAIN, zeros(1, dout)));
        }
        DomainPredictor {
            w: [w[0], w[1], w[2]],
            b: [b[0], b[1], b[2]],
            input_dim,
            hidden,
        }
    }

    /// Domain logit for a pooled 1×d representation (or a stack of them).
    pub fn logit<S: Scalar>(&self, t: &mut Tape<'_, S>, pooled: NodeId) -> NodeId {
        let mut x = pooled;
        for i in 0..3 {
            let w = t.param(self.w[i]);
            let b = t.param(self.b[i]);
            x = t.linear(x, w, b);
            if i < 2 {
                x = t.relu(x);
            }
        }
        x
    }

    pub fn params<S: Scalar>(&self, store: &ParamStore<S>) -> Vec<ParamId> {
        store.group_ids(GROUP_DOMAIN)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaConfig {
    pub lambda: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub d_hidden: usize,
    pub dropout: bool,
}

impl Default for AdaConfig {
    fn default() -> Self {
        AdaConfig {
            lambda: 1.0,
            seed: 0,
            batch_size: 16,
            lr: 0.001,
            epochs: 50,
            d_hidden: 100,
            dropout: true,
        }
    }
}

/// Loss values observed during one alternation step. The step-1 domain loss
/// is measured before D's update; the step-2 value uses the updated D.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdaStepRecord {
    pub event_loss: f64,
    pub domain_loss_step1: f64,
    pub domain_loss_step2: f64,
}

/// Builds the domain-classification loss over both batches: pooled
/// representations through D, binary cross-entropy with source=0, target=1,
/// averaged over sequences. Returns (loss node, src representation nodes).
fn domain_loss_nodes<S: Scalar>(
    t: &mut Tape<'_, S>,
    model: &TaggerModel<S>,
    d: &DomainPredictor,
    src: &[&TrainItem<S>],
    tgt: &[&Array2<S>],
    masks: Option<&[Array2<S>]>,
) -> (NodeId, Vec<(NodeId, NodeId)>) {
    let mut pooled = Vec::new();
    let mut src_nodes = Vec::new();
    for (i, item) in src.iter().enumerate() {
        let mask = masks.map(|m| &m[i]);
        let (repr, logits) = model.forward_nodes(t, &item.feats, mask);
        src_nodes.push((repr, logits));
        pooled.push(pool_sequence(t, repr));
    }
    for feats in tgt {
        let (repr, _) = model.forward_nodes(t, feats, None);
        pooled.push(pool_sequence(t, repr));
    }
    let stacked = t.concat_rows(pooled);
    let z = d.logit(t, stacked);
    let n = src.len() + tgt.len();
    let mut targets = vec![S::zero(); src.len()];
    targets.extend(vec![S::one(); tgt.len()]);
    let w = S::one() / S::of_usize(n);
    let loss = t.bce_logits(z, targets, vec![w; n]);
    (loss, src_nodes)
}

/// Event loss over the already-built source forward passes: mean over source
/// tokens of the α-weighted binary cross-entropy (matches
/// [`crate::tagger::batch_loss_grads`]).
fn event_loss_node<S: Scalar>(
    t: &mut Tape<'_, S>,
    src: &[&TrainItem<S>],
    src_nodes: &[(NodeId, NodeId)],
) -> NodeId {
    let n_tokens: usize = src.iter().map(|it| it.labels.len()).sum();
    let inv = S::one() / S::of_usize(n_tokens.max(1));
    let mut parts = Vec::new();
    for (item, &(_, logits)) in src.iter().zip(src_nodes) {
        let targets: Vec<S> = item.labels.iter().map(|&l| S::of_usize(l as usize)).collect();
        let weights = vec![item.alpha; item.labels.len()];
        parts.push(t.bce_logits(logits, targets, weights));
    }
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = t.add(acc, p);
    }
    t.scale(acc, inv)
}

/// Step-2 objective and gradients: (event loss) − λ·(domain loss), with
/// gradients flowing through the frozen D into the representation. Exposed
/// so tests can compare against independently computed gradients.
pub fn step2_loss_grads<S: Scalar>(
    model: &TaggerModel<S>,
    d: &DomainPredictor,
    src: &[&TrainItem<S>],
    tgt: &[&Array2<S>],
    lambda: f64,
    masks: Option<&[Array2<S>]>,
) -> (f64, f64, Grads<S>) {
    let mut t = Tape::new(&model.store);
    let (domain_loss, src_nodes) = domain_loss_nodes(&mut t, model, d, src, tgt, masks);
    let event = event_loss_node(&mut t, src, &src_nodes);
    let neg = t.scale(domain_loss, S::of(-lambda));
    let total = t.add(event, neg);
    let grads = t.backward(total);
    (
        t.value(event)[(0, 0)].as_f64(),
        t.value(domain_loss)[(0, 0)].as_f64(),
        grads,
    )
}

/// Drives the alternating optimization for one (model, D) pair. D's
/// parameters live in the model's store under group "D" so a saved
/// checkpoint carries both.
pub struct AdaTrainer<S: Scalar> {
    pub d: DomainPredictor,
    pub cfg: AdaConfig,
    opt_d: Adam<S>,
    opt_task: Adam<S>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> AdaTrainer<S> {
    pub fn new(model: &mut TaggerModel<S>, cfg: AdaConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let repr_dim = model.repr_dim();
        let d = DomainPredictor::new(&mut model.store, &mut rng, repr_dim, cfg.d_hidden);
        AdaTrainer {
            d,
            opt_d: Adam::new(S::of(cfg.lr)),
            opt_task: Adam::new(S::of(cfg.lr)),
            cfg,
            rng,
        }
    }

    /// One alternation: step 1 updates only D on the domain loss over both
    /// batches; step 2 updates only R and E on event − λ·domain, leaving D
    /// bitwise unchanged.
    pub fn ada_step(
        &mut self,
        model: &mut TaggerModel<S>,
        src: &[&TrainItem<S>],
        tgt: &[&Array2<S>],
    ) -> Result<AdaStepRecord, AdaError> {
        if src.is_empty() || tgt.is_empty() {
            return Err(AdaError::EmptyBatch);
        }
        let masks: Option<Vec<Array2<S>>> = if self.cfg.dropout {
            Some(
                src.iter()
                    .map(|it| {
                        dropout_mask(
                            &mut self.rng,
                            it.feats.nrows(),
                            it.feats.ncols(),
                            model.meta.input_dropout,
                        )
                    })
                    .collect(),
            )
        } else {
            None
        };

        let domain_loss_step1 = self.step1(model, src, tgt, masks.as_deref());
        let (event_loss, domain_loss_step2) = self.step2(model, src, tgt, masks.as_deref());

        Ok(AdaStepRecord {
            event_loss,
            domain_loss_step1,
            domain_loss_step2,
        })
    }

    /// Step 1 alone: one Adam update of the domain predictor (group D only)
    /// on the domain loss. Returns the pre-update loss.
    pub fn step1(
        &mut self,
        model: &mut TaggerModel<S>,
        src: &[&TrainItem<S>],
        tgt: &[&Array2<S>],
        masks: Option<&[Array2<S>]>,
    ) -> f64 {
        let (domain_loss, d_grads) = {
            let mut t = Tape::new(&model.store);
            let (loss, _) = domain_loss_nodes(&mut t, model, &self.d, src, tgt, masks);
            let g = t.backward(loss);
            (t.value(loss)[(0, 0)].as_f64(), g)
        };
        let d_scope = self.d.params(&model.store);
        self.opt_d.step(&mut model.store, &d_grads, &d_scope);
        domain_loss
    }

    /// Step 2 alone: one Adam update of R and E on event − λ·domain, with D
    /// frozen. Returns (event loss, domain loss).
    pub fn step2(
        &mut self,
        model: &mut TaggerModel<S>,
        src: &[&TrainItem<S>],
        tgt: &[&Array2<S>],
        masks: Option<&[Array2<S>]>,
    ) -> (f64, f64) {
        let (event_loss, domain_loss, grads) =
            step2_loss_grads(model, &self.d, src, tgt, self.cfg.lambda, masks);
        let task_scope = model.task_params();
        self.opt_task.step(&mut model.store, &grads, &task_scope);
        (event_loss, domain_loss)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaTrialRecord {
    pub lambda: f64,
    pub seed: u64,
    pub best_dev_f1: f64,
    pub checkpoint: Option<PathBuf>,
}

pub fn trial_ledger_csv(trials: &[AdaTrialRecord]) -> String {
    let mut s = String::from("lambda,seed,best_dev_f1,checkpoint\n");
    for t in trials {
        s.push_str(&format!(
            "{},{},{},{}\n",
            t.lambda,
            t.seed,
            t.best_dev_f1,
            t.checkpoint
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        ));
    }
    s
}

pub struct AdaOutcome<S: Scalar> {
    pub model: TaggerModel<S>,
    pub best_lambda: f64,
    pub trials: Vec<AdaTrialRecord>,
}

/// One adversarial trial at a fixed λ: epochs of alternation over shuffled
/// source batches with target batches cycled at equal size, best parameters
/// selected by source-dev F1 and restored before returning.
pub fn train_ada_trial<S: Scalar>(
    template: &TaggerModel<S>,
    src: &[TrainItem<S>],
    tgt: &[Array2<S>],
    dev: &[TrainItem<S>],
    cfg: &AdaConfig,
) -> Result<(TaggerModel<S>, f64), AdaError> {
    if src.is_empty() || tgt.is_empty() {
        return Err(AdaError::EmptyBatch);
    }
    let mut model = template.clone();
    let mut trainer = AdaTrainer::new(&mut model, cfg.clone());
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(17));
    let mut best_f1 = -1.0;
    let mut best_snapshot = model.store.snapshot();
    let mut tgt_cursor = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..src.len()).collect();
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let src_batch: Vec<&TrainItem<S>> = chunk.iter().map(|&i| &src[i]).collect();
            let tgt_batch: Vec<&Array2<S>> = (0..src_batch.len())
                .map(|k| &tgt[(tgt_cursor + k) % tgt.len()])
                .collect();
            tgt_cursor = (tgt_cursor + src_batch.len()) % tgt.len();
            let rec = trainer.ada_step(&mut model, &src_batch, &tgt_batch)?;
            if !rec.event_loss.is_finite() {
                return Err(AdaError::NonFiniteLoss {
                    lambda: cfg.lambda,
                    epoch,
                });
            }
        }
        let (_, _, f1) = eval_f1(&model, dev);
        if f1 > best_f1 {
            best_f1 = f1;
            best_snapshot = model.store.snapshot();
        }
    }
    model.store.restore(&best_snapshot);
    Ok((model, best_f1))
}

/// λ-grid search at a fixed seed: one trial per λ, best by source-dev F1.
/// When `out_dir` is given, each trial's checkpoint and the trial ledger are
/// persisted there.
pub fn train_ada<S: Scalar>(
    template: &TaggerModel<S>,
    src: &[TrainItem<S>],
    tgt: &[Array2<S>],
    dev: &[TrainItem<S>],
    lambdas: &[f64],
    cfg: &AdaConfig,
    out_dir: Option<&Path>,
) -> Result<AdaOutcome<S>, AdaError> {
    if lambdas.is_empty() {
        return Err(AdaError::EmptyGrid);
    }
    let mut trials = Vec::new();
    let mut best: Option<(TaggerModel<S>, f64, f64)> = None;
    for &lambda in lambdas {
        let trial_cfg = AdaConfig {
            lambda,
            ..cfg.clone()
        };
        let (model, f1) = train_ada_trial(template, src, tgt, dev, &trial_cfg)?;
        let checkpoint = match out_dir {
            Some(dir) => {
                let path = dir.join(format!("ada_lambda_{lambda}"));
                model.save(&path)?;
                Some(path)
            }
            None => None,
        };
        trials.push(AdaTrialRecord {
            lambda,
            seed: cfg.seed,
            best_dev_f1: f1,
            checkpoint,
        });
        let better = match &best {
            Some((_, best_f1, _)) => f1 > *best_f1,
            None => true,
        };
        if better {
            best = Some((model, f1, lambda));
        }
    }
    let (model, _, best_lambda) = best.expect("non-empty grid");
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("ada_trials.csv"), trial_ledger_csv(&trials))?;
    }
    Ok(AdaOutcome {
        model,
        best_lambda,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagger::{batch_loss_grads, TaggerKind};
    use ndarray::array;

    fn toy_items(seed: u64, n: usize, dim: usize) -> Vec<TrainItem<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.gen_range(3..7);
                let feats = Array2::from_shape_fn((len, dim), |_| rng.gen_range(-1.0..1.0));
                let labels = (0..len).map(|i| (feats[(i, 0)] > 0.0) as u8).collect();
                TrainItem::new(feats, labels)
            })
            .collect()
    }

    fn toy_tgt(seed: u64, n: usize, dim: usize) -> Vec<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.gen_range(3..7);
                // shifted distribution
                Array2::from_shape_fn((len, dim), |_| rng.gen_range(-0.2..1.8))
            })
            .collect()
    }

    #[test]
    fn pooling_is_row_mean() {
        let store = ParamStore::<f64>::new();
        let mut t = Tape::new(&store);
        let single = t.constant(array![[0.3, -0.7]]);
        let p = pool_sequence(&mut t, single);
        assert_eq!(t.value(p), &array![[0.3, -0.7]]);

        let two = t.constant(array![[1.0, 0.0], [0.0, 1.0]]);
        let p2 = pool_sequence(&mut t, two);
        assert_eq!(t.value(p2), &array![[0.5, 0.5]]);

        let dup = t.constant(array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        let p3 = pool_sequence(&mut t, dup);
        assert_eq!(t.value(p3), t.value(p2));
    }

    #[test]
    fn domain_params_disjoint_from_task() {
        let mut m = TaggerModel::<f64>::new(TaggerKind::BilstmMlp, 3, 2, 4, 0);
        let _tr = AdaTrainer::new(&mut m, AdaConfig::default());
        let d_ids = m.store.group_ids(GROUP_DOMAIN);
        let task = m.task_params();
        assert!(!d_ids.is_empty());
        assert!(d_ids.iter().all(|id| !task.contains(id)));
        assert_eq!(d_ids.len() + task.len(), m.store.len());
    }

    #[test]
    fn step_scopes_are_isolated() {
        let mut m = TaggerModel::<f64>::new(TaggerKind::BilstmMlp, 3, 2, 4, 0);
        let cfg = AdaConfig {
            dropout: false,
            ..AdaConfig::default()
        };
        let mut tr = AdaTrainer::new(&mut m, cfg);
        let src = toy_items(1, 4, 3);
        let tgt = toy_tgt(2, 4, 3);
        let src_refs: Vec<&TrainItem<f64>> = src.iter().collect();
        let tgt_refs: Vec<&Array2<f64>> = tgt.iter().collect();

        for _ in 0..5 {
            let task = m.task_params();
            let d_ids = tr.d.params(&m.store);
            let before = m.store.snapshot();
            tr.ada_step(&mut m, &src_refs, &tgt_refs).unwrap();
            let after = m.store.snapshot();
            // D changed (step 1), task changed (step 2); the record proves
            // nothing about interleaving here, so check it at step level in
            // the acceptance suite. Here: every group actually moved.
            assert!(d_ids.iter().any(|id| before[id.0] != after[id.0]));
            assert!(task.iter().any(|id| before[id.0] != after[id.0]));
        }
    }

    #[test]
    fn lambda_zero_step2_matches_plain_gradients() {
        let mut m = TaggerModel::<f64>::new(TaggerKind::BilstmMlp, 3, 2, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rd = m.repr_dim();
        let d = DomainPredictor::new(&mut m.store, &mut rng, rd, 8);
        let src = toy_items(3, 3, 3);
        let tgt = toy_tgt(4, 3, 3);
        let src_refs: Vec<&TrainItem<f64>> = src.iter().collect();
        let tgt_refs: Vec<&Array2<f64>> = tgt.iter().collect();
        let (_, _, g_ada) = step2_loss_grads(&m, &d, &src_refs, &tgt_refs, 0.0, None);
        let (_, g_plain) = batch_loss_grads(&m, &src_refs, None);
        for id in m.task_params() {
            let a = g_ada.get(id).unwrap();
            let b = g_plain.get(id).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12, "{}: {x} vs {y}", m.store.name(id));
            }
        }
    }

    #[test]
    fn step2_gradients_match_finite_differences() {
        let mut m = TaggerModel::<f64>::new(TaggerKind::BilstmMlp, 2, 2, 3, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rd = m.repr_dim();
        let d = DomainPredictor::new(&mut m.store, &mut rng, rd, 4);
        let src = toy_items(5, 2, 2);
        let tgt = toy_tgt(6, 2, 2);
        let src_refs: Vec<&TrainItem<f64>> = src.iter().collect();
        let tgt_refs: Vec<&Array2<f64>> = tgt.iter().collect();
        let lambda = 2.0;

        let loss_of = |m: &TaggerModel<f64>| {
            let (e, dl, _) = step2_loss_grads(m, &d, &src_refs, &tgt_refs, lambda, None);
            e - lambda * dl
        };
        let (_, _, grads) = step2_loss_grads(&m, &d, &src_refs, &tgt_refs, lambda, None);
        let eps = 1e-6;
        for id in m.task_params() {
            let g = grads.get(id).unwrap().clone();
            for idx in [0usize, g.len() / 2, g.len() - 1] {
                let (r, c) = (idx / g.ncols(), idx % g.ncols());
                let orig = m.store.value(id)[(r, c)];
                m.store.value_mut(id)[(r, c)] = orig + eps;
                let up = loss_of(&m);
                m.store.value_mut(id)[(r, c)] = orig - eps;
                let down = loss_of(&m);
                m.store.value_mut(id)[(r, c)] = orig;
                let numeric = (up - down) / (2.0 * eps);
                assert!(
                    (g[(r, c)] - numeric).abs() < 1e-6,
                    "{}[{r},{c}]: {} vs {numeric}",
                    m.store.name(id),
                    g[(r, c)]
                );
            }
        }
    }

    #[test]
    fn empty_batches_error() {
        let mut m = TaggerModel::<f64>::new(TaggerKind::BilstmMlp, 3, 2, 4, 0);
        let mut tr = AdaTrainer::new(&mut m, AdaConfig::default());
        let src = toy_items(1, 2, 3);
        let src_refs: Vec<&TrainItem<f64>> = src.iter().collect();
        assert!(matches!(
            tr.ada_step(&mut m, &src_refs, &[]),
            Err(AdaError::EmptyBatch)
        ));
        assert!(matches!(
            tr.ada_step(&mut m, &[], &[]),
            Err(AdaError::EmptyBatch)
        ));
    }

    #[test]
    fn grid_produces_one_trial_per_lambda() {
        let template = TaggerModel::<f64>::new(TaggerKind::BilstmMlp, 3, 2, 4, 0);
        let src = toy_items(7, 6, 3);
        let tgt = toy_tgt(8, 6, 3);
        let cfg = AdaConfig {
            epochs: 2,
            batch_size: 3,
            dropout: false,
            ..AdaConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let out = train_ada(
            &template,
            &src,
            &tgt,
            &src,
            &LAMBDA_GRID,
            &cfg,
            Some(dir.path()),
        )
        .unwrap();
        assert_eq!(out.trials.len(), 4);
        assert!(LAMBDA_GRID.contains(&out.best_lambda));
        let ledger = std::fs::read_to_string(dir.path().join("ada_trials.csv")).unwrap();
        assert_eq!(ledger.lines().count(), 5);
        for t in &out.trials {
            assert!(t.checkpoint.as_ref().unwrap().join("params.json").exists());
        }
        // a persisted trial checkpoint reloads as a usable tagger
        let back =
            TaggerModel::<f64>::load(out.trials[0].checkpoint.as_ref().unwrap()).unwrap();
        assert_eq!(back.store.len(), template.store.len() + 6);
    }
}

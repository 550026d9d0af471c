//! Token-level event classifiers: the BiLSTM+MLP tagger over encoder
//! features, the delexicalized head-only variant, the verb-rule baseline,
//! and the (optionally instance-weighted) training loop.

use crate::corpus::SentenceRecord;
use crate::nn::lstm::BiLstm;
use crate::nn::store::{ParamId, ParamStore};
use crate::nn::tape::{NodeId, Tape};
use crate::nn::{init, Adam, Grads};
use crate::scalar::Scalar;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Parameter group R: representation pathway (BiLSTM).
pub const GROUP_REPR: &str = "R";
/// Parameter group E: event classification head.
pub const GROUP_HEAD: &str = "E";

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("token {0:?} has no POS tag; run POS tagging before the verb baseline")]
    MissingPos(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A sentence paired with its instance weight α (1.0 = unweighted).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedSentence {
    pub sentence: SentenceRecord,
    pub alpha: f64,
}

impl WeightedSentence {
    pub fn unweighted(sentence: SentenceRecord) -> Self {
        WeightedSentence {
            sentence,
            alpha: 1.0,
        }
    }
}

/// Labels every verbal token as an event. With `include_aux` (the default),
/// universal AUX counts as verbal, so "was diagnosed" yields two triggers.
pub fn verb_baseline(s: &SentenceRecord, include_aux: bool) -> Result<Vec<u8>, TaggerError> {
    s.tokens
        .iter()
        .map(|t| match t.pos.as_deref() {
            Some("VERB") => Ok(1),
            Some("AUX") if include_aux => Ok(1),
            Some(_) => Ok(0),
            None => Err(TaggerError::MissingPos(t.text.clone())),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaggerKind {
    /// Single-layer BiLSTM over features, then the MLP head.
    BilstmMlp,
    /// MLP head directly on per-token features (DELEX).
    HeadOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaggerMeta {
    pub kind: TaggerKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub mlp_dim: usize,
    pub input_dropout: f64,
}

#[derive(Debug, Clone)]
pub struct TaggerModel<S: Scalar> {
    pub store: ParamStore<S>,
    pub meta: TaggerMeta,
    bilstm: Option<BiLstm>,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl<S: Scalar> TaggerModel<S> {
    pub fn new(kind: TaggerKind, input_dim: usize, hidden: usize, mlp_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (bilstm, repr_dim) = match kind {
            TaggerKind::BilstmMlp => {
                let bi = BiLstm::new(&mut store, &mut rng, "tagger.bilstm", GROUP_REPR, input_dim, hidden);
                let d = bi.output_dim();
                (Some(bi), d)
            }
            TaggerKind::HeadOnly => (None, input_dim),
        };
        let w1 = store.add("tagger.mlp.w1", GROUP_HEAD, init::xavier(&mut rng, repr_dim, mlp_dim));
        let b1 = store.add("tagger.mlp.b1", GROUP_HEAD, init::zeros(1, mlp_dim));
        let w2 = store.add("tagger.mlp.w2", GROUP_HEAD, init::xavier(&mut rng, mlp_dim, 1));
        let b2 = store.add("tagger.mlp.b2", GROUP_HEAD, init::zeros(1, 1));
        TaggerModel {
            store,
            meta: TaggerMeta {
                kind,
                input_dim,
                hidden,
                mlp_dim,
                input_dropout: 0.5,
            },
            bilstm,
            w1,
            b1,
            w2,
            b2,
        }
    }

    /// Width of the token representation fed to the MLP head (and, in the
    /// adversarial setup, to the domain predictor).
    pub fn repr_dim(&self) -> usize {
        match self.meta.kind {
            TaggerKind::BilstmMlp => 2 * self.meta.hidden,
            TaggerKind::HeadOnly => self.meta.input_dim,
        }
    }

    pub fn repr_params(&self) -> Vec<ParamId> {
        self.store.group_ids(GROUP_REPR)
    }

    pub fn head_params(&self) -> Vec<ParamId> {
        self.store.group_ids(GROUP_HEAD)
    }

    pub fn task_params(&self) -> Vec<ParamId> {
        let mut ids = self.repr_params();
        ids.extend(self.head_params());
        ids
    }

    /// Builds the forward graph for one sentence's feature matrix.
    /// Returns (token representation node, logit column node).
    pub fn forward_nodes(
        &self,
        t: &mut Tape<'_, S>,
        feats: &Array2<S>,
        input_mask: Option<&Array2<S>>,
    ) -> (NodeId, NodeId) {
        let mut x = t.constant(feats.clone());
        if let Some(mask) = input_mask {
            let m = t.constant(mask.clone());
            x = t.mul(x, m);
        }
        let repr = match &self.bilstm {
            Some(bi) => {
                let steps: Vec<NodeId> = (0..feats.nrows()).map(|i| t.rows(x, vec![i])).collect();
                let hs = bi.run(t, &steps);
                t.concat_rows(hs)
            }
            None => x,
        };
        let (w1, b1, w2, b2) = (
            t.param(self.w1),
            t.param(self.b1),
            t.param(self.w2),
            t.param(self.b2),
        );
        let h = t.linear(repr, w1, b1);
        let h = t.tanh(h);
        let logits = t.linear(h, w2, b2);
        (repr, logits)
    }

    /// Per-token event probabilities (evaluation mode, deterministic).
    pub fn forward(&self, feats: &Array2<S>) -> Vec<S> {
        let mut t = Tape::new(&self.store);
        let (_, logits) = self.forward_nodes(&mut t, feats, None);
        t.value(logits)
            .column(0)
            .iter()
            .map(|&z| crate::nn::tape::sigmoid(z))
            .collect()
    }

    /// Probabilities thresholded at 0.5.
    pub fn predict(&self, feats: &Array2<S>) -> Vec<u8> {
        self.forward(feats)
            .into_iter()
            .map(|p| (p > S::of(0.5)) as u8)
            .collect()
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        self.store.save(&dir.join("params.json"))?;
        let f = std::fs::File::create(dir.join("model.json"))?;
        serde_json::to_writer(std::io::BufWriter::new(f), &self.meta)
            .map_err(std::io::Error::other)
    }

    pub fn load(dir: &Path) -> std::io::Result<TaggerModel<S>> {
        let f = std::fs::File::open(dir.join("model.json"))?;
        let meta: TaggerMeta =
            serde_json::from_reader(std::io::BufReader::new(f)).map_err(std::io::Error::other)?;
        let store: ParamStore<S> = ParamStore::load(&dir.join("params.json"))?;
        Self::from_parts(meta, store).map_err(std::io::Error::other)
    }

    fn from_parts(meta: TaggerMeta, store: ParamStore<S>) -> Result<TaggerModel<S>, String> {
        let lookup = |name: &str| {
            store
                .id_by_name(name)
                .ok_or_else(|| format!("missing parameter {name}"))
        };
        let bilstm = match meta.kind {
            TaggerKind::HeadOnly => None,
            TaggerKind::BilstmMlp => {
                let cell = |dir: &str| -> Result<crate::nn::lstm::LstmCell, String> {
                    let p = format!("tagger.bilstm.{dir}");
                    Ok(crate::nn::lstm::LstmCell {
                        w_x: [
                            lookup(&format!("{p}.w_xi"))?,
                            lookup(&format!("{p}.w_xf"))?,
                            lookup(&format!("{p}.w_xo"))?,
                            lookup(&format!("{p}.w_xg"))?,
                        ],
                        w_h: [
                            lookup(&format!("{p}.w_hi"))?,
                            lookup(&format!("{p}.w_hf"))?,
                            lookup(&format!("{p}.w_ho"))?,
                            lookup(&format!("{p}.w_hg"))?,
                        ],
                        b: [
                            lookup(&format!("{p}.bi"))?,
                            lookup(&format!("{p}.bf"))?,
                            lookup(&format!("{p}.bo"))?,
                            lookup(&format!("{p}.bg"))?,
                        ],
                        input_dim: meta.input_dim,
                        hidden: meta.hidden,
                    })
                };
                Some(BiLstm {
                    fwd: cell("fwd")?,
                    bwd: cell("bwd")?,
                })
            }
        };
        Ok(TaggerModel {
            bilstm,
            w1: lookup("tagger.mlp.w1").map_err(|e| e)?,
            b1: lookup("tagger.mlp.b1")?,
            w2: lookup("tagger.mlp.w2")?,
            b2: lookup("tagger.mlp.b2")?,
            store,
            meta,
        })
    }
}

/// One training instance: feature matrix, gold labels, instance weight.
#[derive(Debug, Clone)]
pub struct TrainItem<S: Scalar> {
    pub feats: Array2<S>,
    pub labels: Vec<u8>,
    pub alpha: S,
}

impl<S: Scalar> TrainItem<S> {
    pub fn new(feats: Array2<S>, labels: Vec<u8>) -> Self {
        assert_eq!(feats.nrows(), labels.len());
        TrainItem {
            feats,
            labels,
            alpha: S::one(),
        }
    }

    pub fn weighted(feats: Array2<S>, labels: Vec<u8>, alpha: S) -> Self {
        let mut it = Self::new(feats, labels);
        it.alpha = alpha;
        it
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub dropout: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr: 0.001,
            max_epochs: 1000,
            patience: 25,
            seed: 0,
            dropout: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,dev_precision,dev_recall,dev_f1\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.train_loss, e.dev_precision, e.dev_recall, e.dev_f1
            ));
        }
        out
    }
}

/// α-weighted batch loss and gradients: mean over batch tokens of
/// αₛ · BCE(token). Exposed for the adversarial trainer, which combines it
/// with the domain loss.
pub fn batch_loss_grads<S: Scalar>(
    model: &TaggerModel<S>,
    batch: &[&TrainItem<S>],
    masks: Option<&[Array2<S>]>,
) -> (S, Grads<S>) {
    let n_tokens: usize = batch.iter().map(|it| it.labels.len()).sum();
    let inv = S::one() / S::of_usize(n_tokens.max(1));
    let mut t = Tape::new(&model.store);
    let mut parts = Vec::new();
    for (i, item) in batch.iter().enumerate() {
        let mask = masks.map(|m| &m[i]);
        let (_, logits) = model.forward_nodes(&mut t, &item.feats, mask);
        let targets: Vec<S> = item.labels.iter().map(|&l| S::of_usize(l as usize)).collect();
        let weights = vec![item.alpha; item.labels.len()];
        parts.push(t.bce_logits(logits, targets, weights));
    }
    let total = if parts.len() == 1 {
        parts[0]
    } else {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = t.add(acc, p);
        }
        acc
    };
    let loss = t.scale(total, inv);
    let grads = t.backward(loss);
    (t.value(loss)[(0, 0)], grads)
}

/// Counts of a token-level comparison.
pub fn prf1(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Token-level precision/recall/F1 of the model on a feature-labeled set.
pub fn eval_f1<S: Scalar>(model: &TaggerModel<S>, dev: &[TrainItem<S>]) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for item in dev {
        let pred = model.predict(&item.feats);
        for (&p, &g) in pred.iter().zip(&item.labels) {
            match (p, g) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => {}
            }
        }
    }
    prf1(tp, fp, fn_)
}

/// Adam training with early stopping on dev F1. The best-scoring parameters
/// are restored into the model before returning.
pub fn train_tagger<S: Scalar>(
    model: &mut TaggerModel<S>,
    train: &[TrainItem<S>],
    dev: &[TrainItem<S>],
    cfg: &TrainConfig,
) -> Result<TrainHistory, TaggerError> {
    if train.is_empty() {
        return Err(TaggerError::EmptyTrainSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(S::of(cfg.lr));
    let scope = model.task_params();
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_dev_f1: -1.0,
    };
    let mut best_snapshot = model.store.snapshot();
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TrainItem<S>> = chunk.iter().map(|&i| &train[i]).collect();
            let masks: Option<Vec<Array2<S>>> = if cfg.dropout {
                Some(
                    batch
                        .iter()
                        .map(|it| {
                            init::dropout_mask(
                                &mut rng,
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
            let (loss, grads) = batch_loss_grads(model, &batch, masks.as_deref());
            if !loss.as_f64().is_finite() {
                return Err(TaggerError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            adam.step(&mut model.store, &grads, &scope);
            epoch_loss += loss.as_f64();
            n_batches += 1;
        }
        let (p, r, f1) = eval_f1(model, dev);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / n_batches as f64,
            dev_precision: p,
            dev_recall: r,
            dev_f1: f1,
        });
        if f1 > history.best_dev_f1 {
            history.best_dev_f1 = f1;
            history.best_epoch = epoch;
            best_snapshot = model.store.snapshot();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }
    model.store.restore(&best_snapshot);
    Ok(history)
}

//! Likelihood-based instance weighting.
//!
//! A target-domain autoregressive word LSTM scores source sentences; the
//! per-sentence log-likelihoods are turned into training weights
//! α_t = 𝕃_t / Σ_i 𝕃_i · N, evaluated in log space with a max-shift so the
//! raw products never underflow. The input and output embedding matrices of
//! the LM are tied: a single parameter serves both roles.

use crate::corpus::{Corpus, SentenceRecord, Vocab};
use crate::nn::init::{dropout_mask, xavier};
use crate::nn::lstm::LstmCell;
use crate::nn::optim::Sgd;
use crate::nn::store::{ParamId, ParamStore};
use crate::nn::tape::{log_sum_exp, NodeId, Tape};
use crate::scalar::Scalar;
use crate::tagger::WeightedSentence;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;

pub const BOS: &str = "<bos>";
const LM_GROUP: &str = "lm";

#[derive(Debug, thiserror::Error)]
pub enum LiwError {
    #[error("cannot build a language model vocabulary from empty text")]
    EmptyText,
    #[error("compute_weights requires a non-empty log-likelihood sequence")]
    EmptyLogliks,
    #[error("non-finite log-likelihood at index {0}")]
    NonFinite(usize),
    #[error("all likelihoods underflowed to zero after max-shift")]
    Underflow,
    #[error("training loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("embedding file dimension {file} does not match model dimension {model}")]
    EmbeddingDim { file: usize, model: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture of the target-domain LM. Tied embeddings require
/// `hidden == emb_dim` (the top hidden state is projected onto the embedding
/// matrix transpose).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmArch {
    pub emb_dim: usize,
    pub n_layers: usize,
    pub dropout: f64,
    /// Words below this frequency in the raw text map to the unknown token.
    pub min_count: usize,
}

impl Default for LmArch {
    fn default() -> Self {
        LmArch {
            emb_dim: 300,
            n_layers: 3,
            dropout: 0.2,
            min_count: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmTrainConfig {
    pub lr: f64,
    /// Divisor applied to the learning rate on a validation-loss plateau.
    pub lr_decay: f64,
    pub clip: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Truncated-backpropagation window length.
    pub bptt: usize,
    /// Fraction of the raw text held out for validation (taken from the end).
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig {
            lr: 20.0,
            lr_decay: 4.0,
            clip: 0.25,
            batch_size: 16,
            epochs: 25,
            bptt: 35,
            val_fraction: 0.05,
            seed: 0,
        }
    }
}

/// Learning-rate schedule: divide by `factor` whenever validation loss fails
/// to improve on the best seen so far. Stays strictly positive.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    pub lr: f64,
    pub factor: f64,
    best: f64,
}

impl LrSchedule {
    pub fn new(lr0: f64, factor: f64) -> Self {
        assert!(lr0 > 0.0 && factor > 1.0);
        LrSchedule {
            lr: lr0,
            factor,
            best: f64::INFINITY,
        }
    }

    /// Feeds one epoch's validation loss; returns the rate to use next.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
        } else {
            self.lr /= self.factor;
        }
        self.lr
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmEpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ppl: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LmTrainReport {
    pub epochs: Vec<LmEpochRecord>,
}

impl LmTrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_ppl,lr\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_ppl, e.lr
            ));
        }
        s
    }
}

/// Target-domain autoregressive LM. The embedding matrix `emb` is used both
/// to look up inputs and (transposed) to project the top hidden state onto
/// the vocabulary, so input and output embeddings share storage by
/// construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct TargetLm<S: Scalar> {
    pub store: ParamStore<S>,
    pub vocab: Vocab,
    pub arch: LmArch,
    emb: ParamId,
    out_bias: ParamId,
    layers: Vec<LstmCell>,
}

impl<S: Scalar> TargetLm<S> {
    pub fn init(vocab: Vocab, arch: LmArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = arch.emb_dim;
        let emb = store.add("lm.emb", LM_GROUP, xavier(&mut rng, vocab.len(), d));
        let out_bias = store.add("lm.b_out", LM_GROUP, Array2::zeros((1, vocab.len())));
        let layers = (0..arch.n_layers)
            .map(|i| LstmCell::new(&mut store, &mut rng, &format!("lm.l{i}"), LM_GROUP, d, d))
            .collect();
        TargetLm {
            store,
            vocab,
            arch,
            emb,
            out_bias,
            layers,
        }
    }

    pub fn emb_id(&self) -> ParamId {
        self.emb
    }

    /// Overwrites embedding rows for vocabulary words present in a static
    /// embedding table (random init is kept for the rest).
    pub fn apply_static_embeddings(
        &mut self,
        table: &HashMap<String, Vec<f64>>,
    ) -> Result<usize, LiwError> {
        let d = self.arch.emb_dim;
        let mut n = 0;
        for (word, vec) in table {
            if vec.len() != d {
                return Err(LiwError::EmbeddingDim {
                    file: vec.len(),
                    model: d,
                });
            }
            if !self.vocab.contains(word) {
                continue;
            }
            let id = self.vocab.id(word);
            let m = self.store.value_mut(self.emb);
            for (j, &x) in vec.iter().enumerate() {
                m[(id as usize, j)] = S::of(x);
            }
            n += 1;
        }
        Ok(n)
    }

    fn ids(&self, tokens: impl Iterator<Item = impl AsRef<str>>) -> Vec<usize> {
        tokens.map(|t| self.vocab.id(t.as_ref()) as usize).collect()
    }

    /// One truncated-BPTT window over `batch` parallel streams.
    /// `cols[t][b]` is the input id of stream `b` at step `t`; `targets`
    /// follow the same layout flattened step-major. Returns the summed loss
    /// node and the per-layer final states as detached values.
    #[allow(clippy::type_complexity)]
    fn window<'t>(
        &self,
        t: &mut Tape<'t, S>,
        cols: &[Vec<usize>],
        targets: &[usize],
        states: &[(Array2<S>, Array2<S>)],
        masks: Option<&[Array2<S>]>,
    ) -> (NodeId, Vec<(Array2<S>, Array2<S>)>) {
        let mut st: Vec<(NodeId, NodeId)> = states
            .iter()
            .map(|(h, c)| (t.constant(h.clone()), t.constant(c.clone())))
            .collect();
        let mask_nodes: Vec<Option<NodeId>> = match masks {
            Some(ms) => ms.iter().map(|m| Some(t.constant(m.clone()))).collect(),
            None => vec![None; self.layers.len()],
        };
        let mut tops = Vec::with_capacity(cols.len());
        for ids in cols {
            let mut x = t.param_rows(self.emb, ids.clone());
            for (li, layer) in self.layers.iter().enumerate() {
                let (h, c) = layer.step(t, x, st[li].0, st[li].1);
                st[li] = (h, c);
                x = h;
                // layer dropout between stacked layers only
                if li + 1 < self.layers.len() {
                    if let Some(m) = mask_nodes[li] {
                        x = t.mul(x, m);
                    }
                }
            }
            tops.push(x);
        }
        let all = t.concat_rows(tops);
        let e = t.param(self.emb);
        let z = t.matmul_tb(all, e);
        let b = t.param(self.out_bias);
        let zb = t.add_row(z, b);
        let n = targets.len();
        let w = S::one() / S::of_usize(n);
        let loss = t.softmax_ce(zb, targets.to_vec(), vec![w; n]);
        let out_states = st
            .iter()
            .map(|&(h, c)| (t.value(h).clone(), t.value(c).clone()))
            .collect();
        (loss, out_states)
    }

    fn zero_states(&self, batch: usize) -> Vec<(Array2<S>, Array2<S>)> {
        let d = self.arch.emb_dim;
        (0..self.layers.len())
            .map(|_| (Array2::zeros((batch, d)), Array2::zeros((batch, d))))
            .collect()
    }

    /// Mean next-word cross-entropy (nats) over an id stream; dropout off.
    fn stream_ce(&self, ids: &[usize], batch: usize, bptt: usize) -> f64 {
        let streams = split_streams(ids, batch);
        let m = streams[0].len();
        if m < 2 {
            return f64::NAN;
        }
        let mut states = self.zero_states(batch);
        let mut total = 0.0;
        let mut count = 0usize;
        let mut pos = 0;
        while pos + 1 < m {
            let w = bptt.min(m - 1 - pos);
            let (cols, targets) = window_slices(&streams, pos, w);
            let mut t = Tape::new(&self.store);
            let (loss, next) = self.window(&mut t, &cols, &targets, &states, None);
            total += t.value(loss)[(0, 0)].as_f64() * targets.len() as f64;
            count += targets.len();
            states = next;
            pos += w;
        }
        total / count as f64
    }

    /// Sum of per-token log conditional probabilities, always ≤ 0. The first
    /// word is conditioned on a beginning-of-sentence token; unknown words
    /// use the unknown-token row.
    pub fn sentence_loglik(&self, s: &SentenceRecord) -> f64 {
        let mut ids = vec![self.vocab.id(BOS) as usize];
        ids.extend(self.ids(s.tokens.iter().map(|t| t.text.as_str())));
        let n = s.tokens.len();
        if n == 0 {
            return 0.0;
        }
        let mut t = Tape::new(&self.store);
        let inputs: Vec<NodeId> = ids[..n]
            .iter()
            .map(|&id| t.param_rows(self.emb, vec![id]))
            .collect();
        let mut hs = inputs;
        for layer in &self.layers {
            hs = layer.run(&mut t, &hs);
        }
        let all = t.concat_rows(hs);
        let e = t.param(self.emb);
        let z = t.matmul_tb(all, e);
        let b = t.param(self.out_bias);
        let zb = t.add_row(z, b);
        let logits = t.value(zb);
        let mut ll = 0.0;
        for i in 0..n {
            let row = logits.row(i);
            let lse = log_sum_exp(row.iter().copied()).as_f64();
            ll += row[ids[i + 1]].as_f64() - lse;
        }
        ll.min(0.0)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), LiwError> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(f), self).map_err(std::io::Error::other)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, LiwError> {
        let f = std::fs::File::open(path)?;
        let lm = serde_json::from_reader(std::io::BufReader::new(f))
            .map_err(std::io::Error::other)?;
        Ok(lm)
    }
}

/// Arranges a token-id stream into `batch` equal-length parallel streams,
/// discarding the remainder.
fn split_streams(ids: &[usize], batch: usize) -> Vec<Vec<usize>> {
    let m = ids.len() / batch;
    (0..batch).map(|b| ids[b * m..(b + 1) * m].to_vec()).collect()
}

/// Inputs for steps `pos..pos+w` and the step-major flattened next-word
/// targets.
fn window_slices(streams: &[Vec<usize>], pos: usize, w: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut cols = Vec::with_capacity(w);
    let mut targets = Vec::with_capacity(w * streams.len());
    for t in 0..w {
        cols.push(streams.iter().map(|s| s[pos + t]).collect());
        targets.extend(streams.iter().map(|s| s[pos + t + 1]));
    }
    (cols, targets)
}

/// Builds the LM vocabulary (min-frequency filter, case-folded, with a
/// beginning-of-sentence token) and trains with SGD under gradient clipping
/// and the divide-on-plateau schedule. Validation perplexity is recorded per
/// epoch.
pub fn train_lm<S: Scalar>(
    tokens: &[String],
    arch: LmArch,
    cfg: &LmTrainConfig,
) -> Result<(TargetLm<S>, LmTrainReport), LiwError> {
    if tokens.is_empty() {
        return Err(LiwError::EmptyText);
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for t in tokens {
        *freq.entry(t.to_lowercase()).or_default() += 1;
    }
    let mut kept: Vec<String> = freq
        .into_iter()
        .filter(|(_, c)| *c >= arch.min_count)
        .map(|(w, _)| w)
        .collect();
    kept.sort(); // deterministic ids independent of hash order
    let words = std::iter::once(BOS.to_string()).chain(kept);
    let vocab = Vocab::from_words(words, true);

    let mut lm = TargetLm::<S>::init(vocab, arch, cfg.seed);
    let ids: Vec<usize> = tokens
        .iter()
        .map(|t| lm.vocab.id(t) as usize)
        .collect();
    let n_val = ((ids.len() as f64 * cfg.val_fraction) as usize).max(cfg.bptt + 2);
    let n_val = n_val.min(ids.len() / 2);
    let (train_ids, val_ids) = ids.split_at(ids.len() - n_val);

    let streams = split_streams(train_ids, cfg.batch_size);
    let m = streams[0].len();
    if m < 2 {
        return Err(LiwError::EmptyText);
    }
    let scope = lm.store.ids();
    let mut sched = LrSchedule::new(cfg.lr, cfg.lr_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut report = LmTrainReport::default();

    for epoch in 1..=cfg.epochs {
        let opt = Sgd::with_clip(S::of(sched.lr), S::of(cfg.clip));
        let mut states = lm.zero_states(cfg.batch_size);
        let mut total = 0.0;
        let mut count = 0usize;
        let mut pos = 0;
        while pos + 1 < m {
            let w = cfg.bptt.min(m - 1 - pos);
            let (cols, targets) = window_slices(&streams, pos, w);
            let masks: Vec<Array2<S>> = (0..lm.layers.len())
                .map(|_| dropout_mask(&mut rng, cfg.batch_size, lm.arch.emb_dim, lm.arch.dropout))
                .collect();
            let (loss_val, next, grads) = {
                let mut t = Tape::new(&lm.store);
                let (loss, next) = lm.window(&mut t, &cols, &targets, &states, Some(&masks));
                let g = t.backward(loss);
                (t.value(loss)[(0, 0)].as_f64(), next, g)
            };
            if !loss_val.is_finite() {
                return Err(LiwError::NonFiniteLoss(epoch));
            }
            opt.step(&mut lm.store, &grads, &scope);
            total += loss_val * targets.len() as f64;
            count += targets.len();
            states = next;
            pos += w;
        }
        let val_ce = lm.stream_ce(val_ids, 1, cfg.bptt);
        let lr_used = sched.lr;
        sched.observe(val_ce);
        report.epochs.push(LmEpochRecord {
            epoch,
            train_loss: total / count as f64,
            val_ppl: val_ce.exp(),
            lr: lr_used,
        });
        log::info!(
            "lm epoch {epoch}: train {:.4} val ppl {:.3} lr {lr_used}",
            total / count as f64,
            val_ce.exp()
        );
    }
    Ok((lm, report))
}

/// Per-sentence log-likelihoods and their normalized weights; Σα = N.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightSet {
    pub logliks: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl WeightSet {
    pub fn n(&self) -> usize {
        self.alphas.len()
    }
}

/// α_t = 𝕃_t / Σ_i 𝕃_i · N over raw likelihoods, computed by exponentiating
/// after subtracting the maximum log-likelihood (the normalization is
/// scale-free, so the shift cancels exactly).
pub fn compute_weights(logliks: &[f64]) -> Result<WeightSet, LiwError> {
    if logliks.is_empty() {
        return Err(LiwError::EmptyLogliks);
    }
    if let Some(i) = logliks.iter().position(|l| !l.is_finite()) {
        return Err(LiwError::NonFinite(i));
    }
    let m = logliks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logliks.iter().map(|l| (l - m).exp()).collect();
    let sum: f64 = shifted.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        return Err(LiwError::Underflow);
    }
    let n = logliks.len() as f64;
    let alphas = shifted.iter().map(|e| e / sum * n).collect();
    Ok(WeightSet {
        logliks: logliks.to_vec(),
        alphas,
    })
}

/// JSONL sidecar row persisting a sentence weight next to the corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightRecord {
    pub doc_id: String,
    pub sentence_index: usize,
    pub loglik: f64,
    pub alpha: f64,
}

/// Scores every sentence under the target LM and attaches normalized
/// weights. `per_token` switches to the off-by-default length-normalized
/// variant (log-likelihood divided by token count before normalization).
pub fn weigh_corpus<S: Scalar>(
    lm: &TargetLm<S>,
    train: &Corpus,
    per_token: bool,
) -> Result<(Vec<WeightedSentence>, Vec<WeightRecord>), LiwError> {
    let sents: Vec<&SentenceRecord> = train.sentences().collect();
    let raw: Vec<f64> = sents.iter().map(|s| lm.sentence_loglik(s)).collect();
    let scored: Vec<f64> = if per_token {
        sents
            .iter()
            .zip(&raw)
            .map(|(s, l)| l / (s.tokens.len().max(1) as f64))
            .collect()
    } else {
        raw.clone()
    };
    let ws = compute_weights(&scored)?;
    let mut weighted = Vec::with_capacity(sents.len());
    let mut records = Vec::with_capacity(sents.len());
    let mut i = 0;
    for doc in &train.documents {
        for (si, s) in doc.sentences.iter().enumerate() {
            weighted.push(WeightedSentence {
                sentence: s.clone(),
                alpha: ws.alphas[i],
            });
            records.push(WeightRecord {
                doc_id: doc.doc_id.clone(),
                sentence_index: si,
                loglik: raw[i],
                alpha: ws.alphas[i],
            });
            i += 1;
        }
    }
    Ok((weighted, records))
}

pub fn write_weight_records(records: &[WeightRecord], path: &std::path::Path) -> Result<(), LiwError> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
        writeln!(w)?;
    }
    Ok(())
}

//! Domain-adaptive fine-tuning of the contextual encoder.
//!
//! Step 1 builds a token-balanced mix of source and target raw sentences and
//! fine-tunes a copy of the encoder on it, either with a masked-language
//! -model objective or (the SYN variant) a POS-tagging objective with a
//! temporary linear tag head. Step 2 is plain tagger training on source with
//! the fine-tuned checkpoint — there is no separate training path.

use crate::corpus::{Corpus, SentenceRecord};
use crate::encoders::{
    ContextualEncoder, EncoderError, ENC_GROUP, MASK_PIECE, MLM_HEAD_GROUP, UPOS_TAGS,
};
use crate::nn::init::xavier;
use crate::nn::optim::Adam;
use crate::nn::store::ParamId;
use crate::nn::tape::Tape;
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Group holding the temporary POS tag head during SYN fine-tuning.
const POS_HEAD_GROUP: &str = "pos_head";

#[derive(Debug, thiserror::Error)]
pub enum DaftError {
    #[error("{0} corpus is empty; both sides are required for mixing")]
    EmptySide(&'static str),
    #[error("mixed corpus has {n} sentences, smaller than one batch of {batch}")]
    TooSmall { n: usize, batch: usize },
    #[error("mask rate {0} outside (0, 1)")]
    BadMaskRate(f64),
    #[error("document {doc_id:?} has untagged tokens; run POS tagging before SYN fine-tuning")]
    MissingPos { doc_id: String },
    #[error("fine-tuning loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DaftObjective {
    Mlm,
    Pos,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DaftConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub objective: DaftObjective,
    pub mask_rate: f64,
    pub lr: f64,
    pub seed: u64,
    /// Checkpoint id of the fine-tuned copy (the base is never mutated).
    pub out_checkpoint_id: String,
}

impl Default for DaftConfig {
    fn default() -> Self {
        DaftConfig {
            epochs: 3,
            batch_size: 4,
            objective: DaftObjective::Mlm,
            mask_rate: 0.15,
            lr: 0.001,
            seed: 0,
            out_checkpoint_id: "daft".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixingRecord {
    pub n_source: usize,
    pub n_target: usize,
    pub source_tokens: usize,
    pub target_tokens: usize,
}

/// Source and target sentences balanced by token count, shuffled.
#[derive(Debug, Clone)]
pub struct MixedCorpus {
    pub sentences: Vec<SentenceRecord>,
    pub record: MixingRecord,
}

/// Truncates the larger side, uniformly at random, to the smaller side's
/// token count. The counts match within one maximum sentence length.
pub fn build_mixed_corpus(
    src: &Corpus,
    tgt: &Corpus,
    seed: u64,
) -> Result<MixedCorpus, DaftError> {
    let src_sents: Vec<SentenceRecord> = src.sentences().cloned().collect();
    let tgt_sents: Vec<SentenceRecord> = tgt.sentences().cloned().collect();
    if src_sents.is_empty() {
        return Err(DaftError::EmptySide("source"));
    }
    if tgt_sents.is_empty() {
        return Err(DaftError::EmptySide("target"));
    }
    let count = |ss: &[SentenceRecord]| ss.iter().map(|s| s.tokens.len()).sum::<usize>();
    let budget = count(&src_sents).min(count(&tgt_sents));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut take = |mut ss: Vec<SentenceRecord>| -> (Vec<SentenceRecord>, usize) {
        ss.shuffle(&mut rng);
        let mut kept = Vec::new();
        let mut tokens = 0usize;
        for s in ss {
            if tokens >= budget {
                break;
            }
            tokens += s.tokens.len();
            kept.push(s);
        }
        (kept, tokens)
    };
    let (src_kept, source_tokens) = take(src_sents);
    let (tgt_kept, target_tokens) = take(tgt_sents);

    let record = MixingRecord {
        n_source: src_kept.len(),
        n_target: tgt_kept.len(),
        source_tokens,
        target_tokens,
    };
    let mut sentences = src_kept;
    sentences.extend(tgt_kept);
    sentences.shuffle(&mut rng);
    Ok(MixedCorpus { sentences, record })
}

/// One sentence's MLM corruption: the corrupted input pieces, the original
/// ids as targets, and the selection mask. Only selected positions carry
/// loss.
#[derive(Debug, Clone)]
pub struct Corruption {
    pub input_ids: Vec<u32>,
    pub targets: Vec<usize>,
    pub selected: Vec<bool>,
}

/// Selects each position with probability `mask_rate`; selected positions
/// become the mask piece 80% of the time, a random piece 10%, and stay
/// unchanged 10%.
pub fn corrupt_pieces<R: Rng>(
    ids: &[u32],
    vocab_len: usize,
    mask_rate: f64,
    rng: &mut R,
) -> Corruption {
    let mut input_ids = Vec::with_capacity(ids.len());
    let mut selected = Vec::with_capacity(ids.len());
    for &id in ids {
        let pick = rng.gen::<f64>() < mask_rate;
        selected.push(pick);
        if pick {
            let roll = rng.gen::<f64>();
            if roll < 0.8 {
                input_ids.push(MASK_PIECE);
            } else if roll < 0.9 {
                input_ids.push(rng.gen_range(0..vocab_len) as u32);
            } else {
                input_ids.push(id);
            }
        } else {
            input_ids.push(id);
        }
    }
    Corruption {
        input_ids,
        targets: ids.iter().map(|&i| i as usize).collect(),
        selected,
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DaftReport {
    pub epoch_losses: Vec<f64>,
    /// Final token tag accuracy on the mixed corpus (SYN objective only).
    pub final_accuracy: Option<f64>,
}

fn check_cfg(mixed: &MixedCorpus, cfg: &DaftConfig) -> Result<(), DaftError> {
    if !(0.0..1.0).contains(&cfg.mask_rate) || cfg.mask_rate == 0.0 {
        return Err(DaftError::BadMaskRate(cfg.mask_rate));
    }
    if mixed.sentences.len() < cfg.batch_size {
        return Err(DaftError::TooSmall {
            n: mixed.sentences.len(),
            batch: cfg.batch_size,
        });
    }
    Ok(())
}

/// Masked-language-model fine-tuning of a copy of the encoder. The returned
/// encoder carries `cfg.out_checkpoint_id`; the input encoder is untouched.
/// With `epochs = 0` the copy is bitwise identical to the base.
pub fn mlm_finetune<S: Scalar>(
    encoder: &ContextualEncoder<S>,
    mixed: &MixedCorpus,
    cfg: &DaftConfig,
) -> Result<(ContextualEncoder<S>, DaftReport), DaftError> {
    check_cfg(mixed, cfg)?;
    let mut enc = encoder.fork(&cfg.out_checkpoint_id);
    let mut report = DaftReport::default();
    if cfg.epochs == 0 {
        return Ok((enc, report));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(S::of(cfg.lr));
    let scope: Vec<ParamId> = enc.all_params();
    let vocab_len = enc.vocab().len();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..mixed.sentences.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let corruptions: Vec<(usize, Corruption)> = chunk
                .iter()
                .filter(|&&i| !mixed.sentences[i].tokens.is_empty())
                .map(|&i| {
                    let pieces = enc.pieces_of(&mixed.sentences[i]);
                    (i, corrupt_pieces(&pieces.ids, vocab_len, cfg.mask_rate, &mut rng))
                })
                .collect();
            let n_selected: usize = corruptions
                .iter()
                .map(|(_, c)| c.selected.iter().filter(|&&s| s).count())
                .sum();
            if n_selected == 0 {
                continue;
            }
            let (loss_val, grads) = {
                let mut t = Tape::new(&enc.store);
                let mut parts = Vec::new();
                for (_, c) in &corruptions {
                    let outs = enc.forward_pieces(&mut t, &c.input_ids);
                    let top = *outs.last().expect("encoder has layers");
                    let logits = enc.mlm_logits(&mut t, top);
                    let weights: Vec<S> = c
                        .selected
                        .iter()
                        .map(|&s| if s { S::one() } else { S::zero() })
                        .collect();
                    parts.push(t.softmax_ce(logits, c.targets.clone(), weights));
                }
                let mut acc = parts[0];
                for &p in &parts[1..] {
                    acc = t.add(acc, p);
                }
                let loss = t.scale(acc, S::one() / S::of_usize(n_selected));
                let g = t.backward(loss);
                (t.value(loss)[(0, 0)].as_f64(), g)
            };
            if !loss_val.is_finite() {
                return Err(DaftError::NonFiniteLoss(epoch));
            }
            adam.step(&mut enc.store, &grads, &scope);
            epoch_loss += loss_val;
            n_batches += 1;
        }
        report.epoch_losses.push(epoch_loss / n_batches.max(1) as f64);
    }
    Ok((enc, report))
}

fn tag_index(tag: &str) -> usize {
    UPOS_TAGS
        .iter()
        .position(|&t| t == tag)
        .unwrap_or(UPOS_TAGS.len() - 1) // out-of-tagset folds into X
}

/// POS-tagging fine-tuning (the SYN variant): a temporary linear tag head
/// over the top encoder layer is trained jointly with the encoder on
/// per-token tag cross-entropy at first-subtoken positions, then discarded.
pub fn pos_finetune<S: Scalar>(
    encoder: &ContextualEncoder<S>,
    mixed: &MixedCorpus,
    cfg: &DaftConfig,
) -> Result<(ContextualEncoder<S>, DaftReport), DaftError> {
    check_cfg(mixed, cfg)?;
    for s in &mixed.sentences {
        if s.tokens.iter().any(|t| t.pos.is_none()) {
            return Err(DaftError::MissingPos {
                doc_id: s.doc_id.clone(),
            });
        }
    }
    let mut enc = encoder.fork(&cfg.out_checkpoint_id);
    let mut report = DaftReport::default();
    if cfg.epochs == 0 {
        return Ok((enc, report));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_tags = UPOS_TAGS.len();
    let head_w = enc.store.add(
        "daft.pos.w",
        POS_HEAD_GROUP,
        xavier(&mut rng, 2 * enc.meta.hidden, n_tags),
    );
    let head_b = enc
        .store
        .add("daft.pos.b", POS_HEAD_GROUP, crate::nn::init::zeros(1, n_tags));
    let mut adam = Adam::new(S::of(cfg.lr));
    let scope: Vec<ParamId> = enc.all_params();

    let forward_tags = |enc: &ContextualEncoder<S>,
                        s: &SentenceRecord,
                        t: &mut Tape<'_, S>| {
        let pieces = enc.pieces_of(s);
        let outs = enc.forward_pieces(t, &pieces.ids);
        let top = *outs.last().expect("encoder has layers");
        let word_rows = t.rows(top, pieces.word_first.clone());
        let w = t.param(head_w);
        let b = t.param(head_b);
        t.linear(word_rows, w, b)
    };

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..mixed.sentences.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let sents: Vec<&SentenceRecord> = chunk
                .iter()
                .map(|&i| &mixed.sentences[i])
                .filter(|s| !s.tokens.is_empty())
                .collect();
            let n_tokens: usize = sents.iter().map(|s| s.tokens.len()).sum();
            if n_tokens == 0 {
                continue;
            }
            let (loss_val, grads) = {
                let mut t = Tape::new(&enc.store);
                let mut parts = Vec::new();
                for s in &sents {
                    let logits = forward_tags(&enc, s, &mut t);
                    let targets: Vec<usize> = s
                        .tokens
                        .iter()
                        .map(|tok| tag_index(tok.pos.as_deref().expect("checked above")))
                        .collect();
                    parts.push(t.softmax_ce(logits, targets, vec![S::one(); s.tokens.len()]));
                }
                let mut acc = parts[0];
                for &p in &parts[1..] {
                    acc = t.add(acc, p);
                }
                let loss = t.scale(acc, S::one() / S::of_usize(n_tokens));
                let g = t.backward(loss);
                (t.value(loss)[(0, 0)].as_f64(), g)
            };
            if !loss_val.is_finite() {
                return Err(DaftError::NonFiniteLoss(epoch));
            }
            adam.step(&mut enc.store, &grads, &scope);
            epoch_loss += loss_val;
            n_batches += 1;
        }
        report.epoch_losses.push(epoch_loss / n_batches.max(1) as f64);
    }

    // final training accuracy, then drop the head
    let (mut correct, mut total) = (0usize, 0usize);
    for s in &mixed.sentences {
        if s.tokens.is_empty() {
            continue;
        }
        let mut t = Tape::new(&enc.store);
        let logits = forward_tags(&enc, s, &mut t);
        let z = t.value(logits);
        for (i, tok) in s.tokens.iter().enumerate() {
            let row = z.row(i);
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(j, _)| j)
                .expect("non-empty tagset");
            if pred == tag_index(tok.pos.as_deref().expect("checked above")) {
                correct += 1;
            }
            total += 1;
        }
    }
    report.final_accuracy = Some(correct as f64 / total.max(1) as f64);
    let stripped = enc.retain_groups(&[ENC_GROUP, MLM_HEAD_GROUP]);
    Ok((stripped, report))
}

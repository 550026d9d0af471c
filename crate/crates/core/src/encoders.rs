//! Feature extraction: a pretrained bidirectional contextual encoder
//! addressed by checkpoint id, and a POS-tag embedding table for the
//! delexicalized baseline.
//!
//! The contextual encoder is a stack of bidirectional LSTM layers over
//! subword pieces. Per-word vectors concatenate the last `layers_to_concat`
//! layer outputs and take the first sub-token of each word. Checkpoints are
//! directories (`meta.json` + `params.json`) in a cache directory, so the
//! base/clinical distinction and DAFT fine-tuning are pure checkpoint swaps.

use crate::corpus::SentenceRecord;
use crate::nn::lstm::BiLstm;
use crate::nn::store::{ParamId, ParamStore};
use crate::nn::tape::{NodeId, Tape};
use crate::nn::{init, Grads};
use crate::scalar::Scalar;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// The 17-tag universal POS tagset.
pub const UPOS_TAGS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X",
];

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("unknown checkpoint id {0:?} (no such directory under the checkpoint cache)")]
    UnknownCheckpoint(String),
    #[error("checkpoint {id:?} is corrupt: {msg}")]
    Corrupt { id: String, msg: String },
    #[error("layers_to_concat={requested} exceeds encoder depth {depth}")]
    TooManyLayers { requested: usize, depth: usize },
    #[error("bad static embedding file at line {line}: {msg}")]
    BadEmbeddingFile { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Selects a checkpoint and the feature-extraction settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub checkpoint_id: String,
    pub layers_to_concat: usize,
    pub subword_to_word: SubwordToWord,
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubwordToWord {
    FirstSubtoken,
}

impl EncoderConfig {
    pub fn new(checkpoint_id: &str) -> Self {
        EncoderConfig {
            checkpoint_id: checkpoint_id.to_string(),
            layers_to_concat: 4,
            subword_to_word: SubwordToWord::FirstSubtoken,
            trainable: false,
        }
    }
}

pub const UNK_PIECE: u32 = 0;
pub const MASK_PIECE: u32 = 1;

/// Greedy longest-match subword vocabulary. Every character seen at build
/// time is a piece, so any in-alphabet word tokenizes without gaps; unknown
/// characters map to the unk piece.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubwordVocab {
    pieces: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    max_piece_len: usize,
}

impl SubwordVocab {
    /// Builds from a word iterator: all characters, whole words with
    /// frequency ≥ `min_count`, and a fixed set of morphological suffixes.
    pub fn build<I: IntoIterator<Item = String>>(words: I, min_count: usize) -> SubwordVocab {
        const SUFFIXES: [&str; 8] = ["ed", "ing", "tion", "sion", "ment", "er", "ly", "s"];
        let mut freq: HashMap<String, usize> = HashMap::new();
        let mut chars: Vec<char> = Vec::new();
        for w in words {
            let w = w.to_lowercase();
            for c in w.chars() {
                if !chars.contains(&c) {
                    chars.push(c);
                }
            }
            *freq.entry(w).or_default() += 1;
        }
        chars.sort_unstable();
        let mut pieces: Vec<String> = vec!["<unk>".into(), "<mask>".into()];
        pieces.extend(chars.iter().map(|c| c.to_string()));
        for s in SUFFIXES {
            if !pieces.iter().any(|p| p == s) {
                pieces.push(s.to_string());
            }
        }
        let mut words: Vec<String> = freq
            .into_iter()
            .filter(|(w, n)| *n >= min_count && w.chars().count() > 1)
            .map(|(w, _)| w)
            .collect();
        words.sort_unstable();
        for w in words {
            if !pieces.contains(&w) {
                pieces.push(w);
            }
        }
        Self::from_pieces(pieces)
    }

    fn from_pieces(pieces: Vec<String>) -> SubwordVocab {
        let index = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i as u32))
            .collect();
        let max_piece_len = pieces.iter().map(|p| p.chars().count()).max().unwrap_or(1);
        SubwordVocab {
            pieces,
            index,
            max_piece_len,
        }
    }

    fn rebuild_index(&mut self) {
        *self = Self::from_pieces(std::mem::take(&mut self.pieces));
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Splits one case-folded word into piece ids, greedy longest match.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        let chars: Vec<char> = word.to_lowercase().chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let mut matched = None;
            let max_len = self.max_piece_len.min(chars.len() - i);
            for len in (1..=max_len).rev() {
                let cand: String = chars[i..i + len].iter().collect();
                if let Some(&id) = self.index.get(&cand) {
                    matched = Some((id, len));
                    break;
                }
            }
            match matched {
                Some((id, len)) => {
                    out.push(id);
                    i += len;
                }
                None => {
                    out.push(UNK_PIECE);
                    i += 1;
                }
            }
        }
        if out.is_empty() {
            out.push(UNK_PIECE);
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderMeta {
    pub checkpoint_id: String,
    pub vocab: SubwordVocab,
    pub emb_dim: usize,
    pub hidden: usize,
    pub n_layers: usize,
    /// Maximum piece-sequence length processed in one window.
    pub max_len: usize,
}

/// Stacked bidirectional subword encoder.
#[derive(Debug, Clone)]
pub struct ContextualEncoder<S: Scalar> {
    pub store: ParamStore<S>,
    pub meta: EncoderMeta,
    emb: ParamId,
    layers: Vec<BiLstm>,
    mlm_head: (ParamId, ParamId),
}

/// Piece expansion of a sentence with word alignment.
pub struct PieceSequence {
    pub ids: Vec<u32>,
    /// Index of the first piece of each word.
    pub word_first: Vec<usize>,
}

pub const ENC_GROUP: &str = "enc";
pub const MLM_HEAD_GROUP: &str = "mlm_head";

impl<S: Scalar> ContextualEncoder<S> {
    /// Fresh randomly initialized encoder (the "base checkpoint" at desk
    /// scale, where no real pretrained weights exist).
    pub fn init_random(
        checkpoint_id: &str,
        vocab: SubwordVocab,
        emb_dim: usize,
        hidden: usize,
        n_layers: usize,
        seed: u64,
    ) -> ContextualEncoder<S> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let emb = store.add(
            "enc.emb",
            ENC_GROUP,
            init::uniform(&mut rng, vocab.len(), emb_dim, 0.1),
        );
        let mut layers = Vec::new();
        for l in 0..n_layers {
            let input = if l == 0 { emb_dim } else { 2 * hidden };
            layers.push(BiLstm::new(
                &mut store,
                &mut rng,
                &format!("enc.layer{l}"),
                ENC_GROUP,
                input,
                hidden,
            ));
        }
        let w = store.add(
            "enc.mlm.w",
            MLM_HEAD_GROUP,
            init::xavier(&mut rng, 2 * hidden, vocab.len()),
        );
        let b = store.add(
            "enc.mlm.b",
            MLM_HEAD_GROUP,
            init::zeros(1, vocab.len()),
        );
        ContextualEncoder {
            store,
            meta: EncoderMeta {
                checkpoint_id: checkpoint_id.to_string(),
                vocab,
                emb_dim,
                hidden,
                n_layers,
                max_len: 512,
            },
            emb,
            layers,
            mlm_head: (w, b),
        }
    }

    /// Output dimension of a word vector for `layers_to_concat` layers.
    pub fn feature_dim(&self, layers_to_concat: usize) -> usize {
        layers_to_concat * 2 * self.meta.hidden
    }

    pub fn depth(&self) -> usize {
        self.meta.n_layers
    }

    pub fn vocab(&self) -> &SubwordVocab {
        &self.meta.vocab
    }

    pub fn pieces_of(&self, s: &SentenceRecord) -> PieceSequence {
        let mut ids = Vec::new();
        let mut word_first = Vec::new();
        for tok in &s.tokens {
            word_first.push(ids.len());
            ids.extend(self.meta.vocab.encode_word(&tok.text));
        }
        PieceSequence { ids, word_first }
    }

    /// Runs the layer stack over piece ids on the given tape. Returns the
    /// per-layer output nodes (each n_pieces × 2·hidden), bottom to top.
    pub fn forward_pieces(&self, t: &mut Tape<'_, S>, ids: &[u32]) -> Vec<NodeId> {
        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let embedded = t.param_rows(self.emb, rows);
        let mut step_inputs: Vec<NodeId> = (0..ids.len())
            .map(|i| t.rows(embedded, vec![i]))
            .collect();
        let mut layer_outputs = Vec::new();
        for layer in &self.layers {
            let hs = layer.run(t, &step_inputs);
            let stacked = t.concat_rows(hs.clone());
            layer_outputs.push(stacked);
            step_inputs = hs;
        }
        layer_outputs
    }

    /// MLM logits over the subword vocabulary from the top layer output.
    pub fn mlm_logits(&self, t: &mut Tape<'_, S>, top: NodeId) -> NodeId {
        let (w, b) = self.mlm_head;
        let wn = t.param(w);
        let bn = t.param(b);
        let wx = t.matmul(top, wn);
        t.add_row(wx, bn)
    }

    /// Per-word feature matrix: last `cfg.layers_to_concat` layer outputs
    /// concatenated, first sub-token per word. Long sentences are processed
    /// in overlapping windows stitched at word boundaries.
    pub fn embed_contextual(
        &self,
        s: &SentenceRecord,
        cfg: &EncoderConfig,
    ) -> Result<Array2<S>, EncoderError> {
        let k = cfg.layers_to_concat;
        if k == 0 || k > self.meta.n_layers {
            return Err(EncoderError::TooManyLayers {
                requested: k,
                depth: self.meta.n_layers,
            });
        }
        let pieces = self.pieces_of(s);
        let dim = self.feature_dim(k);
        let mut out = Array2::zeros((s.tokens.len(), dim));
        if s.tokens.is_empty() {
            return Ok(out);
        }

        let max_len = self.meta.max_len;
        let windows = plan_windows(pieces.ids.len(), max_len);
        for w in &windows {
            let t = &mut Tape::new(&self.store);
            let layer_outputs = self.forward_pieces(t, &pieces.ids[w.start..w.end]);
            let chosen = &layer_outputs[self.meta.n_layers - k..];
            let cat = t.concat_cols(chosen.to_vec());
            let values = t.value(cat);
            for (word, &first) in pieces.word_first.iter().enumerate() {
                if first >= w.own_start && first < w.own_end {
                    out.row_mut(word).assign(&values.row(first - w.start));
                }
            }
        }
        Ok(out)
    }

    pub fn mlm_head_params(&self) -> Vec<ParamId> {
        vec![self.mlm_head.0, self.mlm_head.1]
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.store.group_ids(ENC_GROUP)
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        self.store.ids()
    }

    /// Applies externally computed gradients with the given optimizer scope.
    pub fn apply_sgd(&mut self, lr: S, grads: &Grads<S>, scope: &[ParamId]) {
        crate::nn::Sgd::new(lr).step(&mut self.store, grads, scope);
    }

    pub fn save(&self, cache_dir: &Path) -> Result<PathBuf, EncoderError> {
        let dir = cache_dir.join(&self.meta.checkpoint_id);
        std::fs::create_dir_all(&dir)?;
        let meta = std::fs::File::create(dir.join("meta.json"))?;
        serde_json::to_writer(std::io::BufWriter::new(meta), &self.meta)
            .map_err(std::io::Error::other)?;
        self.store.save(&dir.join("params.json"))?;
        Ok(dir)
    }

    pub fn load(cache_dir: &Path, checkpoint_id: &str) -> Result<ContextualEncoder<S>, EncoderError> {
        let dir = cache_dir.join(checkpoint_id);
        if !dir.is_dir() {
            return Err(EncoderError::UnknownCheckpoint(checkpoint_id.to_string()));
        }
        let corrupt = |msg: String| EncoderError::Corrupt {
            id: checkpoint_id.to_string(),
            msg,
        };
        let meta_file =
            std::fs::File::open(dir.join("meta.json")).map_err(|e| corrupt(e.to_string()))?;
        let mut meta: EncoderMeta = serde_json::from_reader(std::io::BufReader::new(meta_file))
            .map_err(|e| corrupt(e.to_string()))?;
        meta.vocab.rebuild_index();
        let store: ParamStore<S> =
            ParamStore::load(&dir.join("params.json")).map_err(|e| corrupt(e.to_string()))?;
        Self::from_parts(meta, store).map_err(|m| corrupt(m))
    }

    /// Rebinds layer structure onto a loaded store by parameter name.
    fn from_parts(meta: EncoderMeta, store: ParamStore<S>) -> Result<ContextualEncoder<S>, String> {
        let lookup = |name: &str| {
            store
                .id_by_name(name)
                .ok_or_else(|| format!("missing parameter {name}"))
        };
        let emb = lookup("enc.emb")?;
        let mut layers = Vec::new();
        for l in 0..meta.n_layers {
            let input = if l == 0 { meta.emb_dim } else { 2 * meta.hidden };
            let cell = |dir: &str| -> Result<crate::nn::lstm::LstmCell, String> {
                let p = format!("enc.layer{l}.{dir}");
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
                    input_dim: input,
                    hidden: meta.hidden,
                })
            };
            layers.push(BiLstm {
                fwd: cell("fwd")?,
                bwd: cell("bwd")?,
            });
        }
        let mlm_head = (lookup("enc.mlm.w")?, lookup("enc.mlm.b")?);
        Ok(ContextualEncoder {
            store,
            meta,
            emb,
            layers,
            mlm_head,
        })
    }

    /// Copy under a new checkpoint id (copy-on-write fine-tuning).
    pub fn fork(&self, new_id: &str) -> ContextualEncoder<S> {
        let mut clone = self.clone();
        clone.meta.checkpoint_id = new_id.to_string();
        clone
    }

    /// Copy keeping only the parameters in the given groups; auxiliary
    /// training heads are dropped this way after fine-tuning.
    pub fn retain_groups(&self, groups: &[&str]) -> ContextualEncoder<S> {
        let mut store = ParamStore::new();
        for id in self.store.ids() {
            if groups.contains(&self.store.group(id)) {
                store.add(
                    self.store.name(id),
                    self.store.group(id),
                    self.store.value(id).clone(),
                );
            }
        }
        Self::from_parts(self.meta.clone(), store)
            .expect("retained groups must include the encoder parameters")
    }
}

struct Window {
    start: usize,
    end: usize,
    /// Sub-range whose positions this window is responsible for.
    own_start: usize,
    own_end: usize,
}

/// Overlapping windows with stride max_len/2; each position is owned by the
/// window where it sits most centrally.
fn plan_windows(n: usize, max_len: usize) -> Vec<Window> {
    if n <= max_len {
        return vec![Window {
            start: 0,
            end: n,
            own_start: 0,
            own_end: n,
        }];
    }
    let stride = max_len / 2;
    let mut windows = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + max_len).min(n);
        let own_start = if start == 0 { 0 } else { start + stride / 2 };
        let own_end = if end == n { n } else { end - stride / 2 };
        windows.push(Window {
            start,
            end,
            own_start,
            own_end,
        });
        if end == n {
            break;
        }
        start += stride;
    }
    windows
}

/// POS-tag embedding table for the delexicalized baseline. The last row is
/// the unknown-tag row.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct PosEmbeddingTable<S: Scalar> {
    pub tagset: Vec<String>,
    pub dim: usize,
    pub matrix: Array2<S>,
}

impl<S: Scalar> PosEmbeddingTable<S> {
    pub fn new(tagset: &[&str], dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PosEmbeddingTable {
            tagset: tagset.iter().map(|s| s.to_string()).collect(),
            dim,
            matrix: init::uniform(&mut rng, tagset.len() + 1, dim, 0.5),
        }
    }

    pub fn universal(dim: usize, seed: u64) -> Self {
        Self::new(&UPOS_TAGS, dim, seed)
    }

    pub fn row_of(&self, tag: &str) -> usize {
        self.tagset
            .iter()
            .position(|t| t == tag)
            .unwrap_or(self.tagset.len())
    }
}

/// Looks each token's tag up in the table; tokens without a tag or with an
/// out-of-tagset tag use the unknown row.
pub fn embed_pos<S: Scalar>(s: &SentenceRecord, tbl: &PosEmbeddingTable<S>) -> Array2<S> {
    let mut out = Array2::zeros((s.tokens.len(), tbl.dim));
    for (i, tok) in s.tokens.iter().enumerate() {
        let row = match &tok.pos {
            Some(tag) => tbl.row_of(tag),
            None => tbl.tagset.len(),
        };
        out.row_mut(i).assign(&tbl.matrix.row(row));
    }
    out
}

/// Loads a static embedding text file: one word followed by whitespace
/// separated floats per line; all lines must agree on dimension.
pub fn load_static_embeddings(
    path: &Path,
) -> Result<HashMap<String, Vec<f64>>, EncoderError> {
    let content = std::fs::read_to_string(path)?;
    let mut out = HashMap::new();
    let mut dim = None;
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts
            .next()
            .ok_or_else(|| EncoderError::BadEmbeddingFile {
                line: lineno + 1,
                msg: "empty line".into(),
            })?
            .to_string();
        let vals: Result<Vec<f64>, _> = parts.map(|p| p.parse::<f64>()).collect();
        let vals = vals.map_err(|e| EncoderError::BadEmbeddingFile {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        match dim {
            None => dim = Some(vals.len()),
            Some(d) if d != vals.len() => {
                return Err(EncoderError::BadEmbeddingFile {
                    line: lineno + 1,
                    msg: format!("dimension {} != {}", vals.len(), d),
                })
            }
            _ => {}
        }
        out.insert(word, vals);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SentenceRecord, TokenRecord};

    fn sent(words: &[&str], tags: &[&str]) -> SentenceRecord {
        SentenceRecord {
            tokens: words
                .iter()
                .zip(tags)
                .map(|(w, t)| TokenRecord {
                    text: w.to_string(),
                    pos: Some(t.to_string()),
                    label: 0,
                    event_type: None,
                    char_start: 0,
                    char_end: 1,
                })
                .collect(),
            doc_id: "d".into(),
            domain: "news".into(),
        }
    }

    fn tiny_encoder() -> ContextualEncoder<f64> {
        let vocab = SubwordVocab::build(
            ["the", "patient", "was", "diagnosed", "here"]
                .iter()
                .map(|s| s.to_string()),
            1,
        );
        ContextualEncoder::init_random("base", vocab, 8, 4, 4, 0)
    }


    #[test]
    fn subword_greedy_longest_match() {
        let vocab = SubwordVocab::build(["walk".to_string(), "walked".to_string()], 1);
        let ids = vocab.encode_word("walked");
        assert_eq!(ids.len(), 1);
        // unseen word falls back to pieces, never fails
        let ids = vocab.encode_word("walking");
        assert!(ids.len() > 1);
    }

    #[test]
    fn output_shape_matches_words_and_layers() {
        let enc = tiny_encoder();
        let s = sent(
            &["the", "patient", "was", "diagnosed"],
            &["DET", "NOUN", "AUX", "VERB"],
        );
        let cfg = EncoderConfig::new("base");
        let m = enc.embed_contextual(&s, &cfg).unwrap();
        assert_eq!(m.dim(), (4, 4 * 2 * 4));
        let cfg2 = EncoderConfig {
            layers_to_concat: 2,
            ..cfg
        };
        let m2 = enc.embed_contextual(&s, &cfg2).unwrap();
        assert_eq!(m2.dim(), (4, 2 * 2 * 4));
    }

    #[test]
    fn embedding_is_deterministic() {
        let enc = tiny_encoder();
        let s = sent(&["patient", "diagnosed"], &["NOUN", "VERB"]);
        let cfg = EncoderConfig::new("base");
        let a = enc.embed_contextual(&s, &cfg).unwrap();
        let b = enc.embed_contextual(&s, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_layers_is_config_error() {
        let enc = tiny_encoder();
        let s = sent(&["the"], &["DET"]);
        let cfg = EncoderConfig {
            layers_to_concat: 9,
            ..EncoderConfig::new("base")
        };
        assert!(matches!(
            enc.embed_contextual(&s, &cfg),
            Err(EncoderError::TooManyLayers { .. })
        ));
    }

    #[test]
    fn save_load_roundtrip_preserves_features() {
        let enc = tiny_encoder();
        let dir = tempfile::tempdir().unwrap();
        enc.save(dir.path()).unwrap();
        let back: ContextualEncoder<f64> = ContextualEncoder::load(dir.path(), "base").unwrap();
        let s = sent(&["patient", "was", "diagnosed"], &["NOUN", "AUX", "VERB"]);
        let cfg = EncoderConfig::new("base");
        assert_eq!(
            enc.embed_contextual(&s, &cfg).unwrap(),
            back.embed_contextual(&s, &cfg).unwrap()
        );
    }

    #[test]
    fn unknown_checkpoint_errors() {
        let dir = tempfile::tempdir().unwrap();
        let r: Result<ContextualEncoder<f64>, _> = ContextualEncoder::load(dir.path(), "nope");
        assert!(matches!(r, Err(EncoderError::UnknownCheckpoint(_))));
    }

    #[test]
    fn windowing_covers_every_position_once() {
        for n in [5usize, 512, 513, 1000, 2048] {
            let ws = plan_windows(n, 512);
            let mut covered = vec![0usize; n];
            for w in &ws {
                assert!(w.end - w.start <= 512);
                for i in w.own_start..w.own_end {
                    covered[i] += 1;
                }
            }
            assert!(covered.iter().all(|&c| c == 1), "n={n}");
        }
    }

    #[test]
    fn pos_rows_identical_for_same_tag() {
        let tbl = PosEmbeddingTable::<f64>::universal(5, 0);
        let s = sent(&["a", "b", "c"], &["VERB", "NOUN", "VERB"]);
        let m = embed_pos(&s, &tbl);
        assert_eq!(m.row(0), m.row(2));
        assert_ne!(m.row(0), m.row(1));
    }

    #[test]
    fn unknown_tag_uses_unknown_row() {
        let tbl = PosEmbeddingTable::<f64>::universal(5, 0);
        let s = sent(&["a"], &["ZZZ"]);
        let m = embed_pos(&s, &tbl);
        assert_eq!(m.row(0), tbl.matrix.row(tbl.tagset.len()));
    }

    #[test]
    fn pos_lookup_is_position_independent() {
        let tbl = PosEmbeddingTable::<f64>::universal(4, 1);
        let s1 = sent(&["a", "b"], &["VERB", "NOUN"]);
        let s2 = sent(&["b", "a"], &["NOUN", "VERB"]);
        let m1 = embed_pos(&s1, &tbl);
        let m2 = embed_pos(&s2, &tbl);
        assert_eq!(m1.row(0), m2.row(1));
        assert_eq!(m1.row(1), m2.row(0));
    }

    #[test]
    fn static_embedding_loader_validates_dims() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.txt");
        std::fs::write(&p, "cat 0.1 0.2\ndog 0.3 0.4\n").unwrap();
        let m = load_static_embeddings(&p).unwrap();
        assert_eq!(m["cat"], vec![0.1, 0.2]);
        std::fs::write(&p, "cat 0.1 0.2\ndog 0.3\n").unwrap();
        assert!(load_static_embeddings(&p).is_err());
    }
}

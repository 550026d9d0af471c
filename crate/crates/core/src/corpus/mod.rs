//! Canonical data model, annotation-format parsers, vocabulary handling,
//! corpus statistics and inter-annotator agreement.

mod agreement;
mod brat;
mod jsonl;
mod stats;
mod timeml;
mod tokenize;
mod vocab;

pub use agreement::cohens_kappa;
pub use brat::parse_brat;
pub use jsonl::{read_jsonl, read_jsonl_path, write_jsonl, write_jsonl_path};
pub use stats::{corpus_stats, StatsRecord};
pub use timeml::parse_timeml;
pub use tokenize::{sentence_boundaries, tokenize_with_offsets, RawToken};
pub use vocab::{build_vocab, iv_oov_partition, IvOovPartition, Vocab, UNK_ID};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("annotation integrity error: {0}")]
    Integrity(String),
    #[error("label sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Event typology used for analysis labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventType {
    State,
    #[serde(rename = "I-State")]
    IState,
    Occurrence,
    Aspectual,
    ActivityPattern,
    LongTermState,
    None,
}

impl EventType {
    /// Maps a TimeML `class` attribute onto the typology. Unknown classes
    /// return `None` (the caller decides whether to warn).
    pub fn from_timeml_class(class: &str) -> Option<EventType> {
        match class.to_ascii_uppercase().as_str() {
            "STATE" => Some(EventType::State),
            "I_STATE" | "I-STATE" => Some(EventType::IState),
            "OCCURRENCE" => Some(EventType::Occurrence),
            "ASPECTUAL" => Some(EventType::Aspectual),
            "ACTIVITY_PATTERN" | "ACTIVITYPATTERN" => Some(EventType::ActivityPattern),
            "LONG_TERM_STATE" | "LONGTERMSTATE" => Some(EventType::LongTermState),
            _ => None,
        }
    }
}

/// One token with its gold label and character offsets into the source
/// document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<String>,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_type: Option<EventType>,
    pub char_start: usize,
    pub char_end: usize,
}

impl TokenRecord {
    pub fn is_event(&self) -> bool {
        self.label == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub tokens: Vec<TokenRecord>,
    #[serde(default, skip_serializing)]
    pub doc_id: String,
    #[serde(default, skip_serializing)]
    pub domain: String,
}

/// Auxiliary typed span (entities from BRAT); never sets token labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub kind: String,
    pub char_start: usize,
    pub char_end: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub domain: String,
    pub sentences: Vec<SentenceRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entity_spans: Vec<SpanRecord>,
}

impl DocumentRecord {
    /// Propagates doc_id and domain down to the sentences (used after
    /// deserialization, where sentences omit them).
    pub fn link_sentences(&mut self) {
        for s in &mut self.sentences {
            s.doc_id = self.doc_id.clone();
            s.domain = self.domain.clone();
        }
    }

    pub fn tokens(&self) -> impl Iterator<Item = &TokenRecord> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Default for Split {
    fn default() -> Self {
        Split::Train
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<DocumentRecord>,
    #[serde(default)]
    pub split: Split,
}

impl Corpus {
    pub fn new(documents: Vec<DocumentRecord>, split: Split) -> Self {
        Corpus { documents, split }
    }

    pub fn sentences(&self) -> impl Iterator<Item = &SentenceRecord> {
        self.documents.iter().flat_map(|d| d.sentences.iter())
    }

    pub fn tokens(&self) -> impl Iterator<Item = &TokenRecord> {
        self.documents.iter().flat_map(|d| d.tokens())
    }

    pub fn n_sentences(&self) -> usize {
        self.documents.iter().map(|d| d.sentences.len()).sum()
    }
}

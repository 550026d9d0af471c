//! Corpus statistics report.

use super::Corpus;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub n_files: usize,
    pub n_tokens: usize,
    pub n_events: usize,
    /// Fraction of tokens labeled as triggers; 0 for an empty corpus.
    pub event_density: f64,
    /// Distinct case-folded token types.
    pub vocab_size: usize,
    /// Distinct case-folded trigger types.
    pub event_vocab_size: usize,
    /// Vocabulary counts are case-folded; recorded so reports are explicit
    /// about it.
    pub case_folded: bool,
}

pub fn corpus_stats(c: &Corpus) -> StatsRecord {
    let mut vocab: HashSet<String> = HashSet::new();
    let mut event_vocab: HashSet<String> = HashSet::new();
    let mut n_tokens = 0usize;
    let mut n_events = 0usize;
    for t in c.tokens() {
        n_tokens += 1;
        let folded = t.text.to_lowercase();
        if t.is_event() {
            n_events += 1;
            event_vocab.insert(folded.clone());
        }
        vocab.insert(folded);
    }
    StatsRecord {
        n_files: c.documents.len(),
        n_tokens,
        n_events,
        event_density: if n_tokens == 0 {
            0.0
        } else {
            n_events as f64 / n_tokens as f64
        },
        vocab_size: vocab.len(),
        event_vocab_size: event_vocab.len(),
        case_folded: true,
    }
}

impl StatsRecord {
    /// Flat key-value text rendering for the `stats` subcommand.
    pub fn to_text(&self) -> String {
        format!(
            "n_files\t{}\nn_tokens\t{}\nn_events\t{}\nevent_density\t{:.2}%\nvocab_size\t{}\nevent_vocab_size\t{}\ncase_folded\t{}\n",
            self.n_files,
            self.n_tokens,
            self.n_events,
            self.event_density * 100.0,
            self.vocab_size,
            self.event_vocab_size,
            self.case_folded
        )
    }
}

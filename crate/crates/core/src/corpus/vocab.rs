//! Word vocabulary and the IV/OOV partition used for lexical-shift analysis.

use super::Corpus;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

pub const UNK_ID: u32 = 0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    word_to_id: HashMap<String, u32>,
    id_to_word: Vec<String>,
    pub case_folded: bool,
}

impl Vocab {
    /// Builds a vocabulary from an iterator of words. Id 0 is reserved for
    /// the unknown word; known words get dense ids from 1.
    pub fn from_words<I: IntoIterator<Item = String>>(words: I, case_folded: bool) -> Vocab {
        let mut v = Vocab {
            word_to_id: HashMap::new(),
            id_to_word: vec!["<unk>".to_string()],
            case_folded,
        };
        for w in words {
            let w = v.fold(&w);
            if !v.word_to_id.contains_key(&w) {
                let id = v.id_to_word.len() as u32;
                v.word_to_id.insert(w.clone(), id);
                v.id_to_word.push(w);
            }
        }
        v
    }

    fn fold(&self, w: &str) -> String {
        if self.case_folded {
            w.to_lowercase()
        } else {
            w.to_string()
        }
    }

    pub fn id(&self, word: &str) -> u32 {
        *self.word_to_id.get(&self.fold(word)).unwrap_or(&UNK_ID)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_to_id.contains_key(&self.fold(word))
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.id_to_word.get(id as usize).map(|s| s.as_str())
    }

    /// Number of entries including the unknown word.
    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_word.len() <= 1
    }
}

/// Vocabulary over the labeled source training split (case-folded).
pub fn build_vocab(train: &Corpus) -> Vocab {
    Vocab::from_words(train.tokens().map(|t| t.text.clone()), true)
}

/// Case-folded surface types of the test corpus, partitioned by membership
/// in the training vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IvOovPartition {
    pub iv: HashSet<String>,
    pub oov: HashSet<String>,
}

impl IvOovPartition {
    pub fn is_oov(&self, word: &str) -> bool {
        self.oov.contains(&word.to_lowercase())
    }
}

pub fn iv_oov_partition(test: &Corpus, vocab: &Vocab) -> IvOovPartition {
    let mut iv = HashSet::new();
    let mut oov = HashSet::new();
    for t in test.tokens() {
        let folded = t.text.to_lowercase();
        if vocab.contains(&folded) {
            iv.insert(folded);
        } else {
            oov.insert(folded);
        }
    }
    IvOovPartition { iv, oov }
}

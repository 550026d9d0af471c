//! Seeded generator of paired synthetic source/target corpora with
//! controlled lexical, morphological, and event-type shift, plus exact
//! ground-truth oracles for desk-scale validation of the adaptation
//! techniques.

use crate::corpus::{
    corpus_stats, iv_oov_partition, write_jsonl_path, Corpus, CorpusError, DocumentRecord,
    EventType, SentenceRecord, Split, TokenRecord,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("rate {0} = {1} must lie in [0, 1]")]
    RateOutOfRange(&'static str, f64),
    #[error("type_mix sums to {0}, expected 1")]
    TypeMixNotNormalized(f64),
    #[error("type_mix is empty or has a negative entry")]
    TypeMixInvalid,
    #[error("sizes too small: {0}")]
    SizesTooSmall(String),
    #[error("corpus error: {0}")]
    Corpus(#[from] CorpusError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sizes {
    pub source_sentences: usize,
    pub target_sentences: usize,
    /// Minimum token count of the unlabeled target text stream; generation
    /// emits whole sentences until the count is reached.
    pub raw_target_tokens: usize,
    #[serde(default = "default_sentences_per_doc")]
    pub sentences_per_doc: usize,
}

fn default_sentences_per_doc() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    /// Fraction of content-word types replaced by target-only vocabulary.
    pub substitution_rate: f64,
    /// Fraction of replaced event-word types bearing an -ed/-ing/-tion/-sion
    /// suffix in the target vocabulary.
    pub morph_pattern_rate: f64,
    /// Distribution over event types; must sum to 1.
    pub type_mix: Vec<(EventType, f64)>,
    pub sizes: Sizes,
    pub seed: u64,
    /// Fraction of source sentences drawn from the target grammar, so that
    /// instance weighting has in-source target-flavored material to find.
    #[serde(default)]
    pub source_leak: f64,
}

impl ShiftSpec {
    fn validate(&self) -> Result<(), SynthError> {
        for (name, v) in [
            ("substitution_rate", self.substitution_rate),
            ("morph_pattern_rate", self.morph_pattern_rate),
            ("source_leak", self.source_leak),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SynthError::RateOutOfRange(name, v));
            }
        }
        if self.type_mix.is_empty() || self.type_mix.iter().any(|&(_, p)| p < 0.0) {
            return Err(SynthError::TypeMixInvalid);
        }
        let total: f64 = self.type_mix.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SynthError::TypeMixNotNormalized(total));
        }
        if self.sizes.source_sentences == 0 || self.sizes.target_sentences == 0 {
            return Err(SynthError::SizesTooSmall(
                "both corpora need at least one sentence".to_string(),
            ));
        }
        if self.sizes.sentences_per_doc == 0 {
            return Err(SynthError::SizesTooSmall(
                "sentences_per_doc must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub n_tokens: usize,
    pub n_events: usize,
    pub event_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub source: CorpusCounts,
    pub target: CorpusCounts,
    /// Case-folded surfaces of target event tokens absent from the source
    /// corpus.
    pub oov_event_tokens: BTreeSet<String>,
    /// Per source sentence: does it contain at least one target-only word?
    pub source_contains_target_vocab: Vec<bool>,
    /// The full target-only vocabulary introduced by substitution.
    pub target_only_words: BTreeSet<String>,
}

pub struct SynthOutput {
    pub source: Corpus,
    pub target: Corpus,
    pub raw_target: String,
    pub gt: GroundTruth,
}

// ---------------------------------------------------------------------------
// Lexicon
// ---------------------------------------------------------------------------

const ONSETS: [&str; 21] = [
    "b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "cl", "dr", "gr",
    "pl", "st", "tr",
];
const MIDS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 9] = ["l", "n", "r", "s", "t", "m", "rd", "nt", "sk"];

/// Bijective synthetic word generator; distinct `k` < 945 give distinct
/// words, so disjoint index ranges give disjoint vocabularies.
fn word(k: usize) -> String {
    assert!(k < ONSETS.len() * MIDS.len() * CODAS.len());
    format!(
        "{}{}{}",
        ONSETS[k % ONSETS.len()],
        MIDS[(k / ONSETS.len()) % MIDS.len()],
        CODAS[(k / (ONSETS.len() * MIDS.len())) % CODAS.len()]
    )
}

#[derive(Debug, Clone)]
struct Lexicon {
    event_verbs: Vec<String>,
    event_nouns: Vec<String>,
    nouns: Vec<String>,
    adjs: Vec<String>,
}

/// ~200 content words: 60 event verbs, 30 event nouns, 80 filler nouns,
/// 30 adjectives.
fn source_lexicon() -> Lexicon {
    Lexicon {
        event_verbs: (0..60).map(word).collect(),
        event_nouns: (60..90).map(word).collect(),
        nouns: (90..170).map(word).collect(),
        adjs: (170..200).map(word).collect(),
    }
}

fn round_frac(rate: f64, n: usize) -> usize {
    (rate * n as f64).round() as usize
}

/// Replaces a seeded choice of `rate·len` types in one lexicon category by
/// fresh target-only words, optionally suffixed; records the new surfaces.
fn substitute(
    words: &mut [String],
    rate: f64,
    next_k: &mut usize,
    suffixes: &[&str],
    morph_rate: f64,
    rng: &mut ChaCha8Rng,
    target_only: &mut BTreeSet<String>,
) {
    let n_rep = round_frac(rate, words.len());
    let mut idx: Vec<usize> = (0..words.len()).collect();
    idx.shuffle(rng);
    let n_morph = round_frac(morph_rate, n_rep);
    for (j, &i) in idx.iter().take(n_rep).enumerate() {
        let mut w = word(*next_k);
        *next_k += 1;
        if !suffixes.is_empty() && j < n_morph {
            w.push_str(suffixes[j % suffixes.len()]);
        }
        target_only.insert(w.clone());
        words[i] = w;
    }
}

fn target_lexicon(
    src: &Lexicon,
    spec: &ShiftSpec,
    rng: &mut ChaCha8Rng,
) -> (Lexicon, BTreeSet<String>) {
    let mut lex = src.clone();
    let mut target_only = BTreeSet::new();
    // Fresh words start well past the source range so the pools are
    // disjoint by construction.
    let mut next_k = 500usize;
    let r = spec.substitution_rate;
    let m = spec.morph_pattern_rate;
    substitute(
        &mut lex.event_verbs,
        r,
        &mut next_k,
        &["ed", "ing"],
        m,
        rng,
        &mut target_only,
    );
    substitute(
        &mut lex.event_nouns,
        r,
        &mut next_k,
        &["tion", "sion"],
        m,
        rng,
        &mut target_only,
    );
    substitute(&mut lex.nouns, r, &mut next_k, &[], 0.0, rng, &mut target_only);
    substitute(&mut lex.adjs, r, &mut next_k, &[], 0.0, rng, &mut target_only);
    (lex, target_only)
}

// ---------------------------------------------------------------------------
// Template grammar
// ---------------------------------------------------------------------------

/// Sentence frames. Slot codes: `N` filler noun, `A` adjective, `V` event
/// verb, `E` event noun; everything else is a fixed function word. Each
/// frame has exactly one event slot, so event counts are constructive.
///
/// The frames come in pairs with identical function-word skeletons but the
/// event in a different slot, so slot position and context carry no label
/// information: whether a token is an event is decided purely by which
/// lexicon category its surface belongs to. Lexical shift therefore
/// degrades a source-trained tagger instead of being absorbed by
/// positional cues.
const FRAMES: [&str; 20] = [
    "the N was V in the N .",
    "the E was A in the N .",
    "the A N V the N during the N .",
    "the A N A the E during the N .",
    "N and N were V by the A N .",
    "E and N were A by the A N .",
    "after the N the N V the A N .",
    "after the N the E A the A N .",
    "the N had been V again before the N .",
    "the E had been A again before the N .",
    "it was V by the N in the N .",
    "it was A by the E in the N .",
    "the N still V the N at the N .",
    "the E still A the N at the N .",
    "they had V the A N before the N .",
    "they had A the A E before the N .",
    "during the N the N V the N .",
    "during the N the E A the N .",
    "the N V the N and the A N .",
    "the N A the E and the A N .",
];

/// The full source-side vocabulary (content lexicon plus the frames'
/// function words). The generator is constructive, so this — not a sample
/// of the emitted corpus — is the reference for IV/OOV ground truth.
pub fn source_vocab() -> crate::corpus::Vocab {
    let lex = source_lexicon();
    let mut words: Vec<String> = Vec::new();
    words.extend(lex.event_verbs);
    words.extend(lex.event_nouns);
    words.extend(lex.nouns);
    words.extend(lex.adjs);
    for frame in FRAMES {
        for w in frame.split_whitespace() {
            if !matches!(w, "N" | "A" | "V" | "E") {
                words.push(w.to_string());
            }
        }
    }
    crate::corpus::Vocab::from_words(words, true)
}

fn fixed_pos(w: &str) -> &'static str {
    match w {
        "the" | "an" | "a" => "DET",
        "was" | "were" | "had" | "been" => "AUX",
        "in" | "of" | "by" | "at" | "during" | "after" | "before" => "ADP",
        "and" | "but" => "CCONJ",
        "not" => "PART",
        "then" | "soon" | "again" | "still" | "quite" | "too" => "ADV",
        "they" | "it" => "PRON",
        "." => "PUNCT",
        other => panic!("frame word {other:?} has no POS mapping"),
    }
}

fn build_sentence(
    frame: &str,
    lex: &Lexicon,
    event_type: EventType,
    rng: &mut ChaCha8Rng,
    target_only: &BTreeSet<String>,
    doc_id: &str,
    domain: &str,
) -> (SentenceRecord, bool) {
    let mut tokens = Vec::new();
    let mut pos = 0usize; // char offset
    let mut has_target_only = false;
    for code in frame.split_whitespace() {
        let (text, upos, label, ty) = match code {
            "N" => (lex.nouns.choose(rng).unwrap().clone(), "NOUN", 0, None),
            "A" => (lex.adjs.choose(rng).unwrap().clone(), "ADJ", 0, None),
            "V" => (
                lex.event_verbs.choose(rng).unwrap().clone(),
                "VERB",
                1,
                Some(event_type),
            ),
            "E" => (
                lex.event_nouns.choose(rng).unwrap().clone(),
                "NOUN",
                1,
                Some(event_type),
            ),
            w => (w.to_string(), fixed_pos(w), 0, None),
        };
        if target_only.contains(&text) {
            has_target_only = true;
        }
        let start = pos;
        pos += text.chars().count();
        tokens.push(TokenRecord {
            text,
            pos: Some(upos.to_string()),
            label,
            event_type: ty,
            char_start: start,
            char_end: pos,
        });
        pos += 1; // single space
    }
    (
        SentenceRecord {
            tokens,
            doc_id: doc_id.to_string(),
            domain: domain.to_string(),
        },
        has_target_only,
    )
}

/// Largest-remainder apportionment of the type mix over `n` sentences;
/// errors when a positive-probability type would receive zero sentences.
fn apportion(mix: &[(EventType, f64)], n: usize) -> Result<Vec<EventType>, SynthError> {
    let mut counts: Vec<usize> = mix.iter().map(|&(_, p)| (p * n as f64) as usize).collect();
    let mut order: Vec<usize> = (0..mix.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = mix[a].1 * n as f64 - counts[a] as f64;
        let fb = mix[b].1 * n as f64 - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    for (i, &(ty, p)) in mix.iter().enumerate() {
        if p > 0.0 && counts[i] == 0 {
            return Err(SynthError::SizesTooSmall(format!(
                "{n} sentences cannot realize type {ty:?} at probability {p}"
            )));
        }
    }
    let mut queue = Vec::with_capacity(n);
    for (i, &(ty, _)) in mix.iter().enumerate() {
        queue.extend(std::iter::repeat(ty).take(counts[i]));
    }
    Ok(queue)
}

fn into_documents(
    sentences: Vec<SentenceRecord>,
    sentences_per_doc: usize,
    domain: &str,
    prefix: &str,
) -> Vec<DocumentRecord> {
    sentences
        .chunks(sentences_per_doc)
        .enumerate()
        .map(|(i, chunk)| {
            let doc_id = format!("{prefix}{i}");
            let mut sents = chunk.to_vec();
            for s in &mut sents {
                s.doc_id = doc_id.clone();
            }
            DocumentRecord {
                doc_id,
                domain: domain.to_string(),
                sentences: sents,
                entity_spans: Vec::new(),
            }
        })
        .collect()
}

pub fn generate(spec: &ShiftSpec) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let src_lex = source_lexicon();
    let (tgt_lex, target_only) = target_lexicon(&src_lex, spec, &mut rng);

    let n_src = spec.sizes.source_sentences;
    let n_tgt = spec.sizes.target_sentences;
    let mut src_types = apportion(&spec.type_mix, n_src)?;
    src_types.shuffle(&mut rng);
    let mut tgt_types = apportion(&spec.type_mix, n_tgt)?;
    tgt_types.shuffle(&mut rng);

    let n_leak = round_frac(spec.source_leak, n_src);
    let mut leaked = vec![false; n_src];
    let mut positions: Vec<usize> = (0..n_src).collect();
    positions.shuffle(&mut rng);
    for &i in positions.iter().take(n_leak) {
        leaked[i] = true;
    }

    let mut src_sentences = Vec::with_capacity(n_src);
    let mut flags = Vec::with_capacity(n_src);
    let mut src_tokens = 0usize;
    for i in 0..n_src {
        let lex = if leaked[i] { &tgt_lex } else { &src_lex };
        let frame = FRAMES.choose(&mut rng).unwrap();
        let (s, has_tgt) =
            build_sentence(frame, lex, src_types[i], &mut rng, &target_only, "", "synth-source");
        src_tokens += s.tokens.len();
        flags.push(has_tgt);
        src_sentences.push(s);
    }

    let mut tgt_sentences = Vec::with_capacity(n_tgt);
    let mut tgt_tokens = 0usize;
    let mut oov_events = BTreeSet::new();
    for ty in tgt_types.iter().copied() {
        let frame = FRAMES.choose(&mut rng).unwrap();
        let (s, _) =
            build_sentence(frame, &tgt_lex, ty, &mut rng, &target_only, "", "synth-target");
        tgt_tokens += s.tokens.len();
        for t in &s.tokens {
            // target-only surfaces are outside the source vocabulary by
            // construction
            if t.label == 1 && target_only.contains(&t.text) {
                oov_events.insert(t.text.to_lowercase());
            }
        }
        tgt_sentences.push(s);
    }

    let mut raw_lines = Vec::new();
    let mut raw_count = 0usize;
    while raw_count < spec.sizes.raw_target_tokens {
        let frame = FRAMES.choose(&mut rng).unwrap();
        let ty = spec.type_mix[rng.gen_range(0..spec.type_mix.len())].0;
        let (s, _) =
            build_sentence(frame, &tgt_lex, ty, &mut rng, &target_only, "", "synth-target");
        raw_count += s.tokens.len();
        raw_lines.push(
            s.tokens
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join(" "),
        );
    }

    let gt = GroundTruth {
        source: CorpusCounts {
            n_tokens: src_tokens,
            n_events: n_src,
            event_density: n_src as f64 / src_tokens as f64,
        },
        target: CorpusCounts {
            n_tokens: tgt_tokens,
            n_events: n_tgt,
            event_density: n_tgt as f64 / tgt_tokens as f64,
        },
        oov_event_tokens: oov_events,
        source_contains_target_vocab: flags,
        target_only_words: target_only,
    };
    Ok(SynthOutput {
        source: Corpus::new(
            into_documents(src_sentences, spec.sizes.sentences_per_doc, "synth-source", "s"),
            Split::Train,
        ),
        target: Corpus::new(
            into_documents(tgt_sentences, spec.sizes.sentences_per_doc, "synth-target", "t"),
            Split::Test,
        ),
        raw_target: raw_lines.join("\n") + "\n",
        gt,
    })
}

// ---------------------------------------------------------------------------
// Oracle checks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> OracleCheck {
    OracleCheck {
        name: name.to_string(),
        pass,
        detail,
    }
}

/// Re-measures the emitted corpora with the independent analysis tools and
/// compares exactly against the ground truth.
pub fn oracle_checks(
    source: &Corpus,
    target: &Corpus,
    gt: &GroundTruth,
) -> Vec<OracleCheck> {
    let mut out = Vec::new();
    for (side, corpus, truth) in [("source", source, &gt.source), ("target", target, &gt.target)] {
        let stats = corpus_stats(corpus);
        out.push(check(
            &format!("{side}_tokens"),
            stats.n_tokens == truth.n_tokens,
            format!("measured {} vs truth {}", stats.n_tokens, truth.n_tokens),
        ));
        out.push(check(
            &format!("{side}_events"),
            stats.n_events == truth.n_events,
            format!("measured {} vs truth {}", stats.n_events, truth.n_events),
        ));
        out.push(check(
            &format!("{side}_density"),
            stats.event_density == truth.event_density,
            format!(
                "measured {} vs truth {}",
                stats.event_density, truth.event_density
            ),
        ));
    }

    let part = iv_oov_partition(target, &source_vocab());
    let measured_oov_events: BTreeSet<String> = target
        .tokens()
        .filter(|t| t.label == 1)
        .map(|t| t.text.to_lowercase())
        .filter(|w| part.oov.contains(w))
        .collect();
    out.push(check(
        "oov_event_set",
        measured_oov_events == gt.oov_event_tokens,
        format!(
            "measured {} types vs truth {} types",
            measured_oov_events.len(),
            gt.oov_event_tokens.len()
        ),
    ));

    let measured_flags: Vec<bool> = source
        .sentences()
        .map(|s| {
            s.tokens
                .iter()
                .any(|t| gt.target_only_words.contains(&t.text))
        })
        .collect();
    out.push(check(
        "source_target_vocab_flags",
        measured_flags == gt.source_contains_target_vocab,
        format!(
            "{} flagged vs truth {}",
            measured_flags.iter().filter(|&&b| b).count(),
            gt.source_contains_target_vocab
                .iter()
                .filter(|&&b| b)
                .count()
        ),
    ));
    out
}

pub fn all_pass(checks: &[OracleCheck]) -> bool {
    checks.iter().all(|c| c.pass)
}

/// Writes `source.jsonl`, `target.jsonl`, `target_raw.txt`, and
/// `ground_truth.json` into `dir`.
pub fn write_outputs(out: &SynthOutput, dir: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    write_jsonl_path(&out.source, &dir.join("source.jsonl"))?;
    write_jsonl_path(&out.target, &dir.join("target.jsonl"))?;
    std::fs::write(dir.join("target_raw.txt"), &out.raw_target)?;
    std::fs::write(
        dir.join("ground_truth.json"),
        serde_json::to_string_pretty(&out.gt).map_err(CorpusError::from)?,
    )?;
    Ok(())
}

pub fn default_type_mix() -> Vec<(EventType, f64)> {
    vec![
        (EventType::Occurrence, 0.4),
        (EventType::State, 0.2),
        (EventType::LongTermState, 0.15),
        (EventType::ActivityPattern, 0.15),
        (EventType::Aspectual, 0.1),
    ]
}

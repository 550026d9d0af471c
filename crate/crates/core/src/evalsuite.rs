//! Scoring and shift analysis: token-level P/R/F1, IV/OOV bucket scores,
//! morphological-pattern counts over correctly found OOV events, the
//! event-type correctness export, and report/plot emission.

use crate::corpus::{Corpus, EventType, IvOovPartition, TokenRecord};
use crate::tagger::prf1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("prediction/gold misalignment at sentence {sentence}: expected {expected} tokens, got {got}")]
    AlignmentMismatch {
        sentence: usize,
        expected: usize,
        got: usize,
    },
    #[error("prediction has {got} sentences but gold has {expected}")]
    SentenceCountMismatch { expected: usize, got: usize },
    #[error("token {0:?} is in neither the IV nor the OOV bucket; partition is not over this corpus")]
    TokenOutsideBuckets(String),
    #[error("emit_report requires at least one report")]
    NoReports,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Token-level counts with the derived metrics. Precision is defined as 0
/// when nothing is predicted positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Scores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Scores {
        let (precision, recall, f1) = prf1(tp, fp, fn_);
        Scores {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model: String,
    pub source: String,
    pub target: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Scores,
    pub iv: Option<Scores>,
    pub oov: Option<Scores>,
    pub metadata: ReportMeta,
}

fn check_alignment(pred: &[Vec<u8>], gold: &Corpus) -> Result<(), EvalError> {
    let n_gold = gold.n_sentences();
    if pred.len() != n_gold {
        return Err(EvalError::SentenceCountMismatch {
            expected: n_gold,
            got: pred.len(),
        });
    }
    for (i, (p, g)) in pred.iter().zip(gold.sentences()).enumerate() {
        if p.len() != g.tokens.len() {
            return Err(EvalError::AlignmentMismatch {
                sentence: i,
                expected: g.tokens.len(),
                got: p.len(),
            });
        }
    }
    Ok(())
}

/// Token-level scoring of predicted label sequences against gold labels.
pub fn score(pred: &[Vec<u8>], gold: &Corpus, meta: ReportMeta) -> Result<EvalReport, EvalError> {
    check_alignment(pred, gold)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gold.sentences()) {
        for (&pl, tok) in p.iter().zip(&g.tokens) {
            match (pl, tok.label) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => {}
            }
        }
    }
    Ok(EvalReport {
        overall: Scores::from_counts(tp, fp, fn_),
        iv: None,
        oov: None,
        metadata: meta,
    })
}

/// Scoring with each token's tp/fp/fn attributed to its own IV or OOV
/// bucket; the bucket counts additively decompose the overall counts.
pub fn bucket_score(
    pred: &[Vec<u8>],
    gold: &Corpus,
    partition: &IvOovPartition,
    meta: ReportMeta,
) -> Result<EvalReport, EvalError> {
    check_alignment(pred, gold)?;
    let mut counts = [[0usize; 3]; 2]; // [iv, oov] × [tp, fp, fn]
    for (p, g) in pred.iter().zip(gold.sentences()) {
        for (&pl, tok) in p.iter().zip(&g.tokens) {
            let folded = tok.text.to_lowercase();
            let bucket = if partition.iv.contains(&folded) {
                0
            } else if partition.oov.contains(&folded) {
                1
            } else {
                return Err(EvalError::TokenOutsideBuckets(tok.text.clone()));
            };
            match (pl, tok.label) {
                (1, 1) => counts[bucket][0] += 1,
                (1, 0) => counts[bucket][1] += 1,
                (0, 1) => counts[bucket][2] += 1,
                _ => {}
            }
        }
    }
    let iv = Scores::from_counts(counts[0][0], counts[0][1], counts[0][2]);
    let oov = Scores::from_counts(counts[1][0], counts[1][1], counts[1][2]);
    Ok(EvalReport {
        overall: Scores::from_counts(iv.tp + oov.tp, iv.fp + oov.fp, iv.fn_ + oov.fn_),
        iv: Some(iv),
        oov: Some(oov),
        metadata: meta,
    })
}

/// Suffix-pattern counts over correctly identified OOV gold events. Both
/// unconstrained (pure suffix) and POS-constrained counts are reported,
/// since "past-tense verbs in -ed" mixes morphology with POS.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MorphPatternReport {
    pub n_tokens: usize,
    pub ed: usize,
    pub ing: usize,
    pub tion_sion: usize,
    pub ed_verb: usize,
    pub ing_verb: usize,
    pub tion_sion_noun: usize,
    /// Fraction of tokens matching at least one suffix pattern
    /// (each token counted once).
    pub fraction_any: f64,
}

pub fn morph_pattern_report(correct_oov_events: &[&TokenRecord]) -> MorphPatternReport {
    let mut r = MorphPatternReport {
        n_tokens: correct_oov_events.len(),
        ..MorphPatternReport::default()
    };
    let mut any = 0usize;
    for tok in correct_oov_events {
        let w = tok.text.to_lowercase();
        let pos = tok.pos.as_deref();
        let ed = w.ends_with("ed");
        let ing = w.ends_with("ing");
        let ts = w.ends_with("tion") || w.ends_with("sion");
        r.ed += ed as usize;
        r.ing += ing as usize;
        r.tion_sion += ts as usize;
        r.ed_verb += (ed && pos == Some("VERB")) as usize;
        r.ing_verb += (ing && pos == Some("VERB")) as usize;
        r.tion_sion_noun += (ts && pos == Some("NOUN")) as usize;
        any += (ed || ing || ts) as usize;
    }
    r.fraction_any = if r.n_tokens == 0 {
        0.0
    } else {
        any as f64 / r.n_tokens as f64
    };
    r
}

/// One sampled OOV gold event with per-model correctness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeCandidate {
    pub token: String,
    pub event_type: EventType,
    /// (model id, correctly identified) pairs, in output order.
    pub correct_by_model: Vec<(String, bool)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeAnalysisRow {
    pub token: String,
    pub model: String,
    pub target: String,
    pub event_type: EventType,
    pub correct: u8,
}

/// Seeded uniform sample of `k` candidates without replacement, one row per
/// (candidate, model). Requesting more than the population takes the whole
/// population with a warning.
pub fn sample_type_analysis(
    candidates: &[TypeCandidate],
    target: &str,
    k: usize,
    seed: u64,
) -> Vec<TypeAnalysisRow> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k_eff = if k > candidates.len() {
        log::warn!(
            "requested sample of {k} exceeds population {}; taking everything",
            candidates.len()
        );
        candidates.len()
    } else {
        k
    };
    let mut rows = Vec::new();
    for &i in order.iter().take(k_eff) {
        let c = &candidates[i];
        for (model, correct) in &c.correct_by_model {
            rows.push(TypeAnalysisRow {
                token: c.token.clone(),
                model: model.clone(),
                target: target.to_string(),
                event_type: c.event_type,
                correct: *correct as u8,
            });
        }
    }
    rows
}

pub fn type_analysis_csv(rows: &[TypeAnalysisRow]) -> String {
    let mut s = String::from("token,model,target,event_type,correct\n");
    for r in rows {
        let ty = serde_json::to_value(r.event_type)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.token, r.model, r.target, ty, r.correct
        ));
    }
    s
}

fn bucket_rows(report: &EvalReport) -> Vec<(String, Scores)> {
    let mut rows = vec![("overall".to_string(), report.overall)];
    if let Some(iv) = report.iv {
        rows.push(("iv".to_string(), iv));
    }
    if let Some(oov) = report.oov {
        rows.push(("oov".to_string(), oov));
    }
    rows
}

fn report_markdown(reports: &[EvalReport]) -> String {
    let mut s = String::from("# Evaluation summary\n\n");
    s.push_str("| model | target | bucket | P | R | F1 | tp | fp | fn |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for r in reports {
        for (bucket, sc) in bucket_rows(r) {
            s.push_str(&format!(
                "| {} | {} | {} | {:.4} | {:.4} | {:.4} | {} | {} | {} |\n",
                r.metadata.model,
                r.metadata.target,
                bucket,
                sc.precision,
                sc.recall,
                sc.f1,
                sc.tp,
                sc.fp,
                sc.fn_,
            ));
        }
    }
    s
}

/// Registers a system TrueType face for the chart captions. Returns false
/// (and the caller skips chart rendering) when no usable font exists.
fn ensure_font() -> bool {
    use std::sync::OnceLock;
    static FONT_OK: OnceLock<bool> = OnceLock::new();
    *FONT_OK.get_or_init(|| {
        const CANDIDATES: [&str; 2] = [
            "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
            "/usr/share/fonts/TTF/DejaVuSans.ttf",
        ];
        for path in CANDIDATES {
            if let Ok(bytes) = std::fs::read(path) {
                let leaked: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font(
                    "sans-serif",
                    plotters::style::FontStyle::Normal,
                    leaked,
                )
                .is_ok()
                {
                    return true;
                }
            }
        }
        log::warn!("no TrueType font found; skipping chart rendering");
        false
    })
}

fn draw_metric_chart(
    path: &Path,
    title: &str,
    entries: &[(String, f64)],
) -> Result<(), EvalError> {
    use plotters::prelude::*;
    let to_io = |e: String| EvalError::Io(std::io::Error::other(e));
    let root = BitMapBackend::new(path, (900, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| to_io(e.to_string()))?;
    let n = entries.len();
    let labels: Vec<String> = entries.iter().map(|(l, _)| l.clone()).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 24))
        .margin(12)
        .x_label_area_size(70)
        .y_label_area_size(45)
        .build_cartesian_2d(0f64..n as f64, 0f64..1f64)
        .map_err(|e| to_io(e.to_string()))?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            labels.get(i).cloned().unwrap_or_default()
        })
        .y_desc(title.to_string())
        .draw()
        .map_err(|e| to_io(e.to_string()))?;
    chart
        .draw_series(entries.iter().enumerate().map(|(i, (_, v))| {
            Rectangle::new(
                [(i as f64 + 0.15, 0.0), (i as f64 + 0.85, *v)],
                BLUE.mix(0.6).filled(),
            )
        }))
        .map_err(|e| to_io(e.to_string()))?;
    root.present().map_err(|e| to_io(e.to_string()))?;
    Ok(())
}

/// Writes `report.md`, `report.json`, and (when a system font is available)
/// one bar chart per metric across models and buckets. Returns the paths
/// written.
pub fn emit_report(reports: &[EvalReport], out_dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let md = out_dir.join("report.md");
    std::fs::write(&md, report_markdown(reports))?;
    written.push(md);

    let json = out_dir.join("report.json");
    std::fs::write(&json, serde_json::to_string_pretty(reports)?)?;
    written.push(json);

    if ensure_font() {
        for (metric, pick) in [
            ("precision", 0usize),
            ("recall", 1),
            ("f1", 2),
        ] {
            let entries: Vec<(String, f64)> = reports
                .iter()
                .flat_map(|r| {
                    bucket_rows(r).into_iter().map(move |(bucket, sc)| {
                        let v = [sc.precision, sc.recall, sc.f1][pick];
                        (format!("{}/{}", r.metadata.model, bucket), v)
                    })
                })
                .collect();
            let path = out_dir.join(format!("chart_{metric}.png"));
            draw_metric_chart(&path, metric, &entries)?;
            written.push(path);
        }
    }
    Ok(written)
}

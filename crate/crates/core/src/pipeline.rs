//! Experiment driver: validated config files, write-once run directories,
//! and the end-to-end ingest → adapt → train → evaluate → report pipeline
//! behind the CLI.

use crate::ada::{AdaConfig, LAMBDA_GRID};
use crate::corpus::{
    build_vocab, iv_oov_partition, read_jsonl_path, Corpus, SentenceRecord, Split, TokenRecord,
};
use crate::daft::{build_mixed_corpus, mlm_finetune, pos_finetune, DaftConfig, DaftObjective};
use crate::encoders::{ContextualEncoder, EncoderConfig, SubwordVocab};
use crate::evalsuite::{bucket_score, emit_report, score, EvalReport, ReportMeta};
use crate::liw::{train_lm, weigh_corpus, write_weight_records, LmArch, LmTrainConfig};
use crate::tagger::{train_tagger, TaggerKind, TaggerModel, TrainConfig, TrainItem};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable naming the encoder checkpoint cache directory;
/// the `--cache` flag takes precedence.
pub const CHECKPOINT_CACHE_ENV: &str = "EVENTSHIFT_CACHE_DIR";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl PipelineError {
    /// 2 for validation failures, 3 for runtime failures (1 is reserved for
    /// CLI usage errors).
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Runtime(_) => 3,
        }
    }
}

fn rt<E: Into<anyhow::Error>>(e: E) -> PipelineError {
    PipelineError::Runtime(e.into())
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::Validation(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Technique {
    None,
    Ada,
    Liw,
    Daft,
    DaftSyn,
}

impl Technique {
    pub fn as_str(&self) -> &'static str {
        match self {
            Technique::None => "none",
            Technique::Ada => "ada",
            Technique::Liw => "liw",
            Technique::Daft => "daft",
            Technique::DaftSyn => "daft-syn",
        }
    }
}

impl std::str::FromStr for Technique {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Technique::None),
            "ada" => Ok(Technique::Ada),
            "liw" => Ok(Technique::Liw),
            "daft" => Ok(Technique::Daft),
            "daft-syn" => Ok(Technique::DaftSyn),
            other => Err(format!(
                "unknown technique {other:?} (expected none|ada|liw|daft|daft-syn)"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderSettings {
    pub emb_dim: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub layers_to_concat: usize,
    /// Subword vocabulary frequency cutoff.
    pub min_count: usize,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        EncoderSettings {
            emb_dim: 32,
            hidden: 32,
            n_layers: 2,
            layers_to_concat: 2,
            min_count: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaggerSettings {
    pub hidden: usize,
    pub mlp_dim: usize,
    pub train: TrainConfig,
}

impl Default for TaggerSettings {
    fn default() -> Self {
        TaggerSettings {
            hidden: 32,
            mlp_dim: 32,
            train: TrainConfig {
                max_epochs: 80,
                patience: 15,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiwSettings {
    #[serde(default = "default_lm_arch")]
    pub arch: LmArch,
    #[serde(default = "default_lm_train")]
    pub train: LmTrainConfig,
    /// Length-normalized log-likelihood variant (off by default).
    #[serde(default)]
    pub per_token: bool,
}

fn default_lm_arch() -> LmArch {
    LmArch {
        emb_dim: 64,
        n_layers: 1,
        ..LmArch::default()
    }
}

fn default_lm_train() -> LmTrainConfig {
    LmTrainConfig {
        epochs: 8,
        ..LmTrainConfig::default()
    }
}

impl Default for LiwSettings {
    fn default() -> Self {
        LiwSettings {
            arch: default_lm_arch(),
            train: default_lm_train(),
            per_token: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaSettings {
    /// λ values tried in the grid search (best picked by source-dev F1).
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(flatten)]
    pub cfg: AdaConfig,
}

fn default_lambdas() -> Vec<f64> {
    LAMBDA_GRID.to_vec()
}

impl Default for AdaSettings {
    fn default() -> Self {
        AdaSettings {
            lambdas: default_lambdas(),
            cfg: AdaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Labeled source training corpus (canonical JSONL).
    pub source_train: PathBuf,
    /// Labeled in-domain dev corpus for early stopping and model selection.
    pub source_dev: PathBuf,
    /// Labeled out-of-domain test corpus.
    pub target_test: PathBuf,
    /// Unlabeled target text (one sentence per line); required whenever
    /// technique ≠ none.
    #[serde(default)]
    pub target_raw: Option<PathBuf>,
    /// POS-tagged target sentences (JSONL; event labels ignored) for the
    /// daft-syn objective.
    #[serde(default)]
    pub target_pos: Option<PathBuf>,
    /// Existing encoder checkpoint id (resolved against the cache dir);
    /// a fresh small encoder is initialized when absent.
    #[serde(default)]
    pub encoder_checkpoint: Option<String>,
    pub technique: Technique,
    #[serde(default)]
    pub ada: Option<AdaSettings>,
    #[serde(default)]
    pub liw: Option<LiwSettings>,
    #[serde(default)]
    pub daft: Option<DaftConfig>,
    #[serde(default)]
    pub encoder: EncoderSettings,
    #[serde(default)]
    pub tagger: TaggerSettings,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| invalid(format!("bad config: {e}")))
    }

    /// Checks the sub-config ⇔ technique invariant and input existence, and
    /// materializes defaults (including seed propagation into sub-configs)
    /// so the persisted config replays the run exactly.
    pub fn resolve(mut self) -> Result<ExperimentConfig, PipelineError> {
        let wants = |name: &str, present: bool, needed: bool| {
            if present && !needed {
                Err(invalid(format!(
                    "{name} sub-config present but technique is {}",
                    self.technique.as_str()
                )))
            } else {
                Ok(())
            }
        };
        wants("ada", self.ada.is_some(), self.technique == Technique::Ada)?;
        wants("liw", self.liw.is_some(), self.technique == Technique::Liw)?;
        wants(
            "daft",
            self.daft.is_some(),
            matches!(self.technique, Technique::Daft | Technique::DaftSyn),
        )?;
        match self.technique {
            Technique::None => {}
            Technique::Ada => {
                let mut a = self.ada.take().unwrap_or_default();
                a.cfg.seed = self.seed;
                if a.lambdas.is_empty() {
                    return Err(invalid("ada.lambdas must be non-empty"));
                }
                self.ada = Some(a);
            }
            Technique::Liw => {
                let mut l = self.liw.take().unwrap_or_default();
                l.train.seed = self.seed;
                self.liw = Some(l);
            }
            Technique::Daft | Technique::DaftSyn => {
                let mut d = self.daft.take().unwrap_or_default();
                d.seed = self.seed;
                d.objective = if self.technique == Technique::Daft {
                    DaftObjective::Mlm
                } else {
                    DaftObjective::Pos
                };
                self.daft = Some(d);
            }
        }
        self.tagger.train.seed = self.seed;

        for (name, path, required) in [
            ("source_train", Some(&self.source_train), true),
            ("source_dev", Some(&self.source_dev), true),
            ("target_test", Some(&self.target_test), true),
            (
                "target_raw",
                self.target_raw.as_ref(),
                self.technique != Technique::None,
            ),
            (
                "target_pos",
                self.target_pos.as_ref(),
                self.technique == Technique::DaftSyn,
            ),
        ] {
            match path {
                Some(p) if !p.exists() => {
                    return Err(invalid(format!("{name} path {} does not exist", p.display())))
                }
                None if required => {
                    return Err(invalid(format!(
                        "{name} is required for technique {}",
                        self.technique.as_str()
                    )))
                }
                _ => {}
            }
        }
        Ok(self)
    }
}

/// Splits raw text (one sentence per line, whitespace tokens) into an
/// unlabeled corpus.
pub fn raw_to_corpus(text: &str, domain: &str) -> Corpus {
    let sentences: Vec<SentenceRecord> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let mut tokens = Vec::new();
            let mut pos = 0usize;
            for w in line.split_whitespace() {
                let start = pos;
                pos += w.chars().count() + 1;
                tokens.push(TokenRecord {
                    text: w.to_string(),
                    pos: None,
                    label: 0,
                    event_type: None,
                    char_start: start,
                    char_end: pos - 1,
                });
            }
            SentenceRecord {
                tokens,
                doc_id: "raw".to_string(),
                domain: domain.to_string(),
            }
        })
        .collect();
    Corpus::new(
        vec![crate::corpus::DocumentRecord {
            doc_id: "raw".to_string(),
            domain: domain.to_string(),
            sentences,
            entity_spans: Vec::new(),
        }],
        Split::Train,
    )
}

/// Resolves the checkpoint cache directory: explicit flag, then the
/// environment variable, then `<run dir>/cache`.
pub fn cache_dir(flag: Option<&Path>, run_dir: &Path) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(p) = std::env::var(CHECKPOINT_CACHE_ENV) {
        if !p.is_empty() {
            return PathBuf::from(p);
        }
    }
    run_dir.join("cache")
}

pub fn featurize(
    enc: &ContextualEncoder<crate::F>,
    corpus: &Corpus,
    layers_to_concat: usize,
) -> Result<Vec<TrainItem<crate::F>>, PipelineError> {
    let mut cfg = EncoderConfig::new(&enc.meta.checkpoint_id);
    cfg.layers_to_concat = layers_to_concat.min(enc.depth());
    corpus
        .sentences()
        .map(|s| {
            let feats = enc.embed_contextual(s, &cfg).map_err(rt)?;
            Ok(TrainItem::new(
                feats,
                s.tokens.iter().map(|t| t.label).collect(),
            ))
        })
        .collect()
}

/// Per-dimension standardization statistics fitted on the training
/// features, so tagger optimization is invariant to the encoder's output
/// scale (fine-tuning can shift it substantially). Saved next to the
/// tagger checkpoint; evaluation must apply the same transform.
#[derive(Serialize, Deserialize)]
pub struct FeatureScaler {
    mean: Vec<crate::F>,
    std: Vec<crate::F>,
}

impl FeatureScaler {
    pub fn fit(items: &[TrainItem<crate::F>]) -> FeatureScaler {
        let dim = items.first().map_or(0, |it| it.feats.ncols());
        let mut mean = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut n = 0usize;
        for it in items {
            for row in it.feats.rows() {
                for (j, &x) in row.iter().enumerate() {
                    mean[j] += x;
                    sq[j] += x * x;
                }
            }
            n += it.feats.nrows();
        }
        let nf = (n.max(1)) as crate::F;
        let std = mean
            .iter()
            .zip(&sq)
            .map(|(&m, &s)| ((s / nf - (m / nf).powi(2)).max(0.0)).sqrt().max(1e-6))
            .collect();
        for m in &mut mean {
            *m /= nf;
        }
        FeatureScaler { mean, std }
    }

    pub fn apply(&self, feats: &mut ndarray::Array2<crate::F>) {
        for mut row in feats.rows_mut() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - self.mean[j]) / self.std[j];
            }
        }
    }

    pub fn apply_all(&self, items: &mut [TrainItem<crate::F>]) {
        for it in items {
            self.apply(&mut it.feats);
        }
    }
}

fn fnv1a64(data: &[u8], mut h: u64) -> u64 {
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLedger {
    pub technique: String,
    pub seed: u64,
    /// FNV-1a over the resolved config plus the emitted report JSON; equal
    /// configs must reproduce equal hashes.
    pub outputs_hash: String,
    pub dev_f1: f64,
    pub test_f1: f64,
}

#[derive(Debug)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub dev: EvalReport,
    pub test: EvalReport,
    pub ledger: RunLedger,
}

/// Whether `run` stops after training (the `train` subcommand) or carries
/// on through evaluation and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    TrainOnly,
    Full,
}

pub fn run(
    config: ExperimentConfig,
    cache_flag: Option<&Path>,
    mode: RunMode,
) -> Result<Option<RunSummary>, PipelineError> {
    let config = config.resolve()?;
    let run_dir = config.out_dir.clone();
    if run_dir.exists() {
        let occupied = std::fs::read_dir(&run_dir).map_err(rt)?.next().is_some();
        if occupied {
            return Err(invalid(format!(
                "run directory {} already exists; run directories are write-once",
                run_dir.display()
            )));
        }
    }
    std::fs::create_dir_all(&run_dir).map_err(rt)?;
    let config_json = serde_json::to_string_pretty(&config).map_err(rt)?;
    std::fs::write(run_dir.join("config.json"), &config_json).map_err(rt)?;

    // ingest
    let source_train = read_jsonl_path(&config.source_train, Split::Train).map_err(rt)?;
    let source_dev = read_jsonl_path(&config.source_dev, Split::Dev).map_err(rt)?;
    let target_test = read_jsonl_path(&config.target_test, Split::Test).map_err(rt)?;
    let raw_text = match &config.target_raw {
        Some(p) => Some(std::fs::read_to_string(p).map_err(rt)?),
        None => None,
    };

    // encoder
    let cache = cache_dir(cache_flag, &run_dir);
    let mut encoder: ContextualEncoder<crate::F> = match &config.encoder_checkpoint {
        Some(id) => ContextualEncoder::load(&cache, id).map_err(rt)?,
        None => {
            let words = source_train
                .tokens()
                .map(|t| t.text.clone())
                .chain(raw_text.iter().flat_map(|t| {
                    t.split_whitespace().map(str::to_string).collect::<Vec<_>>()
                }));
            let vocab = SubwordVocab::build(words, config.encoder.min_count);
            ContextualEncoder::init_random(
                "scratch",
                vocab,
                config.encoder.emb_dim,
                config.encoder.hidden,
                config.encoder.n_layers,
                config.seed,
            )
        }
    };

    // adapt
    let mut alphas: Option<Vec<f64>> = None;
    match config.technique {
        Technique::None | Technique::Ada => {}
        Technique::Liw => {
            let liw = config.liw.as_ref().unwrap();
            let raw = raw_text.as_ref().unwrap();
            let tokens: Vec<String> = raw.split_whitespace().map(str::to_string).collect();
            let (lm, report) =
                train_lm::<crate::F>(&tokens, liw.arch.clone(), &liw.train).map_err(rt)?;
            std::fs::write(run_dir.join("lm_history.csv"), report.to_csv()).map_err(rt)?;
            lm.save(&run_dir.join("lm.json")).map_err(rt)?;
            let (weighted, records) =
                weigh_corpus(&lm, &source_train, liw.per_token).map_err(rt)?;
            write_weight_records(&records, &run_dir.join("weights.jsonl")).map_err(rt)?;
            alphas = Some(weighted.iter().map(|w| w.alpha).collect());
        }
        Technique::Daft | Technique::DaftSyn => {
            let daft = config.daft.as_ref().unwrap();
            let tgt_corpus = match config.technique {
                Technique::Daft => raw_to_corpus(raw_text.as_ref().unwrap(), "target"),
                _ => {
                    // POS objective: labels on the tagged corpus are ignored
                    let mut c = read_jsonl_path(config.target_pos.as_ref().unwrap(), Split::Train)
                        .map_err(rt)?;
                    for d in &mut c.documents {
                        for s in &mut d.sentences {
                            for t in &mut s.tokens {
                                t.label = 0;
                                t.event_type = None;
                            }
                        }
                    }
                    c
                }
            };
            let mixed = build_mixed_corpus(&source_train, &tgt_corpus, config.seed).map_err(rt)?;
            std::fs::write(
                run_dir.join("mixing.json"),
                serde_json::to_string_pretty(&mixed.record).map_err(rt)?,
            )
            .map_err(rt)?;
            let (adapted, report) = match daft.objective {
                DaftObjective::Mlm => mlm_finetune(&encoder, &mixed, daft).map_err(rt)?,
                DaftObjective::Pos => pos_finetune(&encoder, &mixed, daft).map_err(rt)?,
            };
            std::fs::write(
                run_dir.join("daft_report.json"),
                serde_json::to_string_pretty(&report).map_err(rt)?,
            )
            .map_err(rt)?;
            adapted.save(&cache).map_err(rt)?;
            encoder = adapted;
        }
    }

    // featurize
    let k = config.encoder.layers_to_concat;
    let mut train_items = featurize(&encoder, &source_train, k)?;
    if let Some(a) = &alphas {
        for (item, &alpha) in train_items.iter_mut().zip(a) {
            item.alpha = alpha;
        }
    }
    let scaler = FeatureScaler::fit(&train_items);
    scaler.apply_all(&mut train_items);
    let mut dev_items = featurize(&encoder, &source_dev, k)?;
    scaler.apply_all(&mut dev_items);
    let mut test_items = featurize(&encoder, &target_test, k)?;
    scaler.apply_all(&mut test_items);

    // train
    let input_dim = encoder.feature_dim(k.min(encoder.depth()));
    let template = TaggerModel::new(
        TaggerKind::BilstmMlp,
        input_dim,
        config.tagger.hidden,
        config.tagger.mlp_dim,
        config.seed,
    );
    let model = if config.technique == Technique::Ada {
        let ada = config.ada.as_ref().unwrap();
        let tgt_feats: Vec<ndarray::Array2<crate::F>> =
            featurize(&encoder, &raw_to_corpus(raw_text.as_ref().unwrap(), "target"), k)?
                .into_iter()
                .map(|it| {
                    let mut f = it.feats;
                    scaler.apply(&mut f);
                    f
                })
                .filter(|f| f.nrows() > 0)
                .collect();
        let outcome = crate::ada::train_ada(
            &template,
            &train_items,
            &tgt_feats,
            &dev_items,
            &ada.lambdas,
            &ada.cfg,
            Some(&run_dir),
        )
        .map_err(rt)?;
        outcome.model
    } else {
        let mut model = template;
        let history =
            train_tagger(&mut model, &train_items, &dev_items, &config.tagger.train)
                .map_err(rt)?;
        std::fs::write(run_dir.join("train_history.csv"), history.to_csv()).map_err(rt)?;
        model
    };
    let tagger_dir = run_dir.join("tagger");
    model.save(&tagger_dir).map_err(rt)?;
    std::fs::write(
        tagger_dir.join("scaler.json"),
        serde_json::to_string(&scaler).map_err(rt)?,
    )
    .map_err(rt)?;
    if mode == RunMode::TrainOnly {
        return Ok(None);
    }

    // evaluate: in-domain dev, out-of-domain test with IV/OOV buckets
    let meta = |target: &str| ReportMeta {
        model: config.technique.as_str().to_string(),
        source: config.source_train.display().to_string(),
        target: target.to_string(),
        seed: config.seed,
    };
    let dev_pred: Vec<Vec<u8>> = dev_items.iter().map(|it| model.predict(&it.feats)).collect();
    let dev_report = score(&dev_pred, &source_dev, meta("source-dev")).map_err(rt)?;
    let test_pred: Vec<Vec<u8>> =
        test_items.iter().map(|it| model.predict(&it.feats)).collect();
    let partition = iv_oov_partition(&target_test, &build_vocab(&source_train));
    let test_report =
        bucket_score(&test_pred, &target_test, &partition, meta("target-test")).map_err(rt)?;

    // report + ledger
    let report_dir = run_dir.join("report");
    emit_report(
        &[dev_report.clone(), test_report.clone()],
        &report_dir,
    )
    .map_err(rt)?;
    let report_json = std::fs::read(report_dir.join("report.json")).map_err(rt)?;
    let mut h = fnv1a64(config_json.as_bytes(), 0xcbf29ce484222325);
    h = fnv1a64(&report_json, h);
    let ledger = RunLedger {
        technique: config.technique.as_str().to_string(),
        seed: config.seed,
        outputs_hash: format!("{h:016x}"),
        dev_f1: dev_report.overall.f1,
        test_f1: test_report.overall.f1,
    };
    std::fs::write(
        run_dir.join("ledger.json"),
        serde_json::to_string_pretty(&ledger).map_err(rt)?,
    )
    .map_err(rt)?;
    Ok(Some(RunSummary {
        run_dir,
        dev: dev_report,
        test: test_report,
        ledger,
    }))
}

//! Command-line driver. Every subcommand delegates to one library
//! operation and composes with the others through files; exit codes are
//! 0 success, 1 usage, 2 validation, 3 runtime.

use clap::{Parser, Subcommand};
use eventshift::corpus::{
    cohens_kappa, corpus_stats, parse_brat, parse_timeml, read_jsonl_path, write_jsonl_path,
    Corpus, Split,
};
use eventshift::daft::{build_mixed_corpus, mlm_finetune, pos_finetune, DaftConfig, DaftObjective};
use eventshift::encoders::SubwordVocab;
use eventshift::evalsuite::{bucket_score, emit_report, score, EvalReport, ReportMeta};
use eventshift::liw::{train_lm, weigh_corpus, write_weight_records, LmArch, LmTrainConfig};
use eventshift::pipeline::{
    cache_dir, featurize, raw_to_corpus, ExperimentConfig, PipelineError, RunMode, Technique,
};
use eventshift::synthbench::{
    all_pass, default_type_mix, generate, oracle_checks, write_outputs, ShiftSpec, Sizes,
};
use eventshift::{ContextualEncoder, TargetLm};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "eventshift", version, about = "Domain-adaptation toolkit for event-trigger extraction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse BRAT/TimeML input into the canonical JSONL format
    Ingest {
        /// Directory (brat/timeml) or file to read
        input: PathBuf,
        #[arg(long, value_parser = ["brat", "timeml", "jsonl"])]
        format: String,
        #[arg(long, default_value = "unknown")]
        domain: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print corpus statistics for a JSONL, BRAT, or TimeML corpus
    Stats {
        input: PathBuf,
        #[arg(long, default_value = "jsonl", value_parser = ["brat", "timeml", "jsonl"])]
        format: String,
        #[arg(long, default_value = "unknown")]
        domain: String,
    },
    /// Cohen's kappa between the token labels of two aligned JSONL corpora
    Kappa { a: PathBuf, b: PathBuf },
    /// Generate a synthetic source/target benchmark pair with ground truth
    SynthGen {
        /// ShiftSpec JSON file; a default spec is used when omitted
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the target-domain language model on raw text
    LmTrain {
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        emb_dim: usize,
        #[arg(long, default_value_t = 1)]
        layers: usize,
        #[arg(long, default_value_t = 8)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Attach likelihood-derived instance weights to a training corpus
    Weigh {
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_token: bool,
    },
    /// Initialize a random subword encoder checkpoint from raw text
    EncoderInit {
        /// One or more text files providing the subword vocabulary
        #[arg(long, required = true)]
        text: Vec<PathBuf>,
        #[arg(long)]
        id: String,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        emb_dim: usize,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 2)]
        min_count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Domain-adaptive fine-tuning of an encoder on mixed raw text
    DaftFinetune {
        #[arg(long)]
        encoder: String,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        source: PathBuf,
        /// Raw target text (mlm objective)
        #[arg(long)]
        target_raw: Option<PathBuf>,
        /// POS-tagged target JSONL (pos objective)
        #[arg(long)]
        target_pos: Option<PathBuf>,
        #[arg(long, default_value = "mlm", value_parser = ["mlm", "pos"])]
        objective: String,
        #[arg(long, default_value_t = 3)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_id: String,
    },
    /// Train a tagger from an experiment config (stops before evaluation)
    Train {
        #[command(flatten)]
        run_args: RunArgs,
    },
    /// Evaluate a saved tagger on a labeled JSONL corpus
    Eval {
        #[arg(long)]
        tagger: PathBuf,
        #[arg(long)]
        encoder: String,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        /// Source training corpus; enables IV/OOV bucket scores
        #[arg(long)]
        train_vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        layers_to_concat: usize,
        #[arg(long, default_value = "model")]
        model_name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render markdown/JSON/chart reports from EvalReport JSON files
    Report {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: ingest → adapt → train → evaluate → report
    Run {
        #[command(flatten)]
        run_args: RunArgs,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides the config technique
    #[arg(long, value_parser = parse_technique)]
    technique: Option<Technique>,
}

fn parse_technique(s: &str) -> Result<Technique, String> {
    s.parse()
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn rt<E: Into<anyhow::Error>>(e: E) -> PipelineError {
    PipelineError::Runtime(e.into())
}

fn ingest_corpus(input: &Path, format: &str, domain: &str) -> Result<Corpus, PipelineError> {
    if !input.exists() {
        return Err(PipelineError::Validation(format!(
            "input {} does not exist",
            input.display()
        )));
    }
    let corpus = match format {
        "jsonl" => read_jsonl_path(input, Split::Train).map_err(rt)?,
        "brat" => {
            let mut docs = Vec::new();
            let mut txts: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(rt)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "txt"))
                .collect();
            txts.sort();
            for txt in txts {
                let ann = txt.with_extension("ann");
                if !ann.exists() {
                    continue;
                }
                let doc_id = txt.file_stem().unwrap().to_string_lossy().to_string();
                let text = std::fs::read_to_string(&txt).map_err(rt)?;
                let ann_text = std::fs::read_to_string(&ann).map_err(rt)?;
                docs.push(parse_brat(&ann_text, &text, &doc_id, domain).map_err(rt)?);
            }
            Corpus::new(docs, Split::Train)
        }
        "timeml" => {
            let mut files = if input.is_dir() {
                std::fs::read_dir(input)
                    .map_err(rt)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "tml"))
                    .collect()
            } else {
                vec![input.to_path_buf()]
            };
            files.sort();
            let mut docs = Vec::new();
            for f in files {
                let doc_id = f.file_stem().unwrap().to_string_lossy().to_string();
                let text = std::fs::read_to_string(&f).map_err(rt)?;
                docs.push(parse_timeml(&text, &doc_id, domain).map_err(rt)?);
            }
            Corpus::new(docs, Split::Train)
        }
        other => {
            return Err(PipelineError::Validation(format!("unknown format {other}")))
        }
    };
    Ok(corpus)
}

fn resolve_cache(flag: Option<&Path>) -> PathBuf {
    cache_dir(flag, Path::new("."))
}

fn apply_overrides(mut cfg: ExperimentConfig, args: &RunArgs) -> ExperimentConfig {
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &args.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(t) = args.technique {
        cfg.technique = t;
    }
    cfg
}

fn dispatch(cmd: Cmd) -> Result<(), PipelineError> {
    match cmd {
        Cmd::Ingest {
            input,
            format,
            domain,
            out,
        } => {
            let corpus = ingest_corpus(&input, &format, &domain)?;
            write_jsonl_path(&corpus, &out).map_err(rt)?;
            println!("wrote {} documents to {}", corpus.documents.len(), out.display());
        }
        Cmd::Stats {
            input,
            format,
            domain,
        } => {
            let corpus = ingest_corpus(&input, &format, &domain)?;
            print!("{}", corpus_stats(&corpus).to_text());
        }
        Cmd::Kappa { a, b } => {
            let ca = read_jsonl_path(&a, Split::Test).map_err(rt)?;
            let cb = read_jsonl_path(&b, Split::Test).map_err(rt)?;
            let la: Vec<u8> = ca.tokens().map(|t| t.label).collect();
            let lb: Vec<u8> = cb.tokens().map(|t| t.label).collect();
            let k = cohens_kappa(&la, &lb).map_err(rt)?;
            println!("kappa\t{k}");
        }
        Cmd::SynthGen { spec, seed, out } => {
            let mut spec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(rt)?;
                    serde_json::from_str::<ShiftSpec>(&text)
                        .map_err(|e| PipelineError::Validation(format!("bad spec: {e}")))?
                }
                None => ShiftSpec {
                    substitution_rate: 0.5,
                    morph_pattern_rate: 0.5,
                    type_mix: default_type_mix(),
                    sizes: Sizes {
                        source_sentences: 400,
                        target_sentences: 200,
                        raw_target_tokens: 20_000,
                        sentences_per_doc: 10,
                    },
                    seed: 0,
                    source_leak: 0.0,
                },
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let output = generate(&spec).map_err(rt)?;
            write_outputs(&output, &out).map_err(rt)?;
            let checks = oracle_checks(&output.source, &output.target, &output.gt);
            for c in &checks {
                println!("{}\t{}\t{}", c.name, if c.pass { "pass" } else { "FAIL" }, c.detail);
            }
            if !all_pass(&checks) {
                return Err(rt(anyhow::anyhow!("oracle checks failed")));
            }
        }
        Cmd::LmTrain {
            text,
            out,
            emb_dim,
            layers,
            epochs,
            seed,
        } => {
            let raw = std::fs::read_to_string(&text).map_err(rt)?;
            let tokens: Vec<String> = raw.split_whitespace().map(str::to_string).collect();
            let arch = LmArch {
                emb_dim,
                n_layers: layers,
                ..LmArch::default()
            };
            let cfg = LmTrainConfig {
                epochs,
                seed,
                ..LmTrainConfig::default()
            };
            let (lm, report) = train_lm::<eventshift::F>(&tokens, arch, &cfg).map_err(rt)?;
            std::fs::create_dir_all(&out).map_err(rt)?;
            lm.save(&out.join("lm.json")).map_err(rt)?;
            std::fs::write(out.join("lm_history.csv"), report.to_csv()).map_err(rt)?;
            if let Some(last) = report.epochs.last() {
                println!("final validation perplexity\t{}", last.val_ppl);
            }
        }
        Cmd::Weigh {
            lm,
            train,
            out,
            per_token,
        } => {
            let lm = TargetLm::load(&lm).map_err(rt)?;
            let corpus = read_jsonl_path(&train, Split::Train).map_err(rt)?;
            let (_, records) = weigh_corpus(&lm, &corpus, per_token).map_err(rt)?;
            write_weight_records(&records, &out).map_err(rt)?;
            println!("wrote {} weight records to {}", records.len(), out.display());
        }
        Cmd::EncoderInit {
            text,
            id,
            cache,
            emb_dim,
            hidden,
            layers,
            min_count,
            seed,
        } => {
            let mut words = Vec::new();
            for p in &text {
                let raw = std::fs::read_to_string(p).map_err(rt)?;
                words.extend(raw.split_whitespace().map(str::to_string));
            }
            let vocab = SubwordVocab::build(words, min_count);
            let enc: ContextualEncoder =
                eventshift::encoders::ContextualEncoder::init_random(
                    &id, vocab, emb_dim, hidden, layers, seed,
                );
            let dir = enc.save(&resolve_cache(cache.as_deref())).map_err(rt)?;
            println!("saved encoder checkpoint {} to {}", id, dir.display());
        }
        Cmd::DaftFinetune {
            encoder,
            cache,
            source,
            target_raw,
            target_pos,
            objective,
            epochs,
            seed,
            out_id,
        } => {
            let cache = resolve_cache(cache.as_deref());
            let enc: ContextualEncoder =
                eventshift::encoders::ContextualEncoder::load(&cache, &encoder).map_err(rt)?;
            let src = read_jsonl_path(&source, Split::Train).map_err(rt)?;
            let (obj, tgt) = match objective.as_str() {
                "mlm" => {
                    let p = target_raw.ok_or_else(|| {
                        PipelineError::Validation("--target-raw is required for mlm".into())
                    })?;
                    let raw = std::fs::read_to_string(&p).map_err(rt)?;
                    (DaftObjective::Mlm, raw_to_corpus(&raw, "target"))
                }
                _ => {
                    let p = target_pos.ok_or_else(|| {
                        PipelineError::Validation("--target-pos is required for pos".into())
                    })?;
                    (
                        DaftObjective::Pos,
                        read_jsonl_path(&p, Split::Train).map_err(rt)?,
                    )
                }
            };
            let mixed = build_mixed_corpus(&src, &tgt, seed).map_err(rt)?;
            let cfg = DaftConfig {
                epochs,
                objective: obj,
                seed,
                out_checkpoint_id: out_id.clone(),
                ..DaftConfig::default()
            };
            let (adapted, report) = match cfg.objective {
                DaftObjective::Mlm => mlm_finetune(&enc, &mixed, &cfg).map_err(rt)?,
                DaftObjective::Pos => pos_finetune(&enc, &mixed, &cfg).map_err(rt)?,
            };
            let dir = adapted.save(&cache).map_err(rt)?;
            println!(
                "saved adapted encoder {} to {} (epoch losses: {:?})",
                out_id,
                dir.display(),
                report.epoch_losses
            );
        }
        Cmd::Train { run_args } => {
            let cfg = apply_overrides(ExperimentConfig::load(&run_args.config)?, &run_args);
            eventshift::pipeline::run(cfg, run_args.cache.as_deref(), RunMode::TrainOnly)?;
            println!("training complete");
        }
        Cmd::Eval {
            tagger,
            encoder,
            cache,
            test,
            train_vocab,
            layers_to_concat,
            model_name,
            out,
        } => {
            let cache = resolve_cache(cache.as_deref());
            let enc: ContextualEncoder =
                eventshift::encoders::ContextualEncoder::load(&cache, &encoder).map_err(rt)?;
            let model = eventshift::TaggerModel::load(&tagger).map_err(rt)?;
            let corpus = read_jsonl_path(&test, Split::Test).map_err(rt)?;
            let mut items = featurize(&enc, &corpus, layers_to_concat)?;
            // apply the training-time feature standardization when present
            let scaler_path = tagger.join("scaler.json");
            if scaler_path.exists() {
                let scaler: eventshift::pipeline::FeatureScaler = serde_json::from_str(
                    &std::fs::read_to_string(&scaler_path).map_err(rt)?,
                )
                .map_err(rt)?;
                scaler.apply_all(&mut items);
            }
            let pred: Vec<Vec<u8>> = items.iter().map(|it| model.predict(&it.feats)).collect();
            let meta = ReportMeta {
                model: model_name,
                source: train_vocab
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
                target: test.display().to_string(),
                seed: 0,
            };
            let report = match &train_vocab {
                Some(p) => {
                    let train = read_jsonl_path(p, Split::Train).map_err(rt)?;
                    let part = eventshift::corpus::iv_oov_partition(
                        &corpus,
                        &eventshift::corpus::build_vocab(&train),
                    );
                    bucket_score(&pred, &corpus, &part, meta).map_err(rt)?
                }
                None => score(&pred, &corpus, meta).map_err(rt)?,
            };
            println!(
                "precision\t{:.4}\nrecall\t{:.4}\nf1\t{:.4}",
                report.overall.precision, report.overall.recall, report.overall.f1
            );
            if let Some(p) = out {
                std::fs::write(&p, serde_json::to_string_pretty(&report).map_err(rt)?)
                    .map_err(rt)?;
            }
        }
        Cmd::Report { inputs, out } => {
            if inputs.is_empty() {
                return Err(PipelineError::Validation(
                    "at least one report file is required".into(),
                ));
            }
            let mut reports: Vec<EvalReport> = Vec::new();
            for p in &inputs {
                let text = std::fs::read_to_string(p).map_err(rt)?;
                // each file holds either a single report or a list
                match serde_json::from_str::<EvalReport>(&text) {
                    Ok(r) => reports.push(r),
                    Err(_) => reports.extend(
                        serde_json::from_str::<Vec<EvalReport>>(&text)
                            .map_err(|e| PipelineError::Validation(format!("bad report {}: {e}", p.display())))?,
                    ),
                }
            }
            let written = emit_report(&reports, &out).map_err(rt)?;
            for p in written {
                println!("wrote {}", p.display());
            }
        }
        Cmd::Run { run_args } => {
            let cfg = apply_overrides(ExperimentConfig::load(&run_args.config)?, &run_args);
            let summary = eventshift::pipeline::run(cfg, run_args.cache.as_deref(), RunMode::Full)?
                .expect("full mode returns a summary");
            println!(
                "run {}\ndev F1\t{:.4}\ntest F1\t{:.4}\noutputs hash\t{}",
                summary.run_dir.display(),
                summary.dev.overall.f1,
                summary.test.overall.f1,
                summary.ledger.outputs_hash
            );
        }
    }
    Ok(())
}

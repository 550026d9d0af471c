//! Acceptance gate: one test per criterion, each printing a single
//! pass/fail line (run with `--nocapture` to see them). Numeric fixtures
//! (criteria 8–10) are locked regressions calibrated on the committed
//! synthetic benchmark seeds.

use eventshift::ada::{step2_loss_grads, AdaConfig, AdaTrainer, DomainPredictor};
use eventshift::corpus::{cohens_kappa, corpus_stats, parse_timeml, Corpus, Split};
use eventshift::daft::{build_mixed_corpus, corrupt_pieces, mlm_finetune, DaftConfig};
use eventshift::encoders::{ContextualEncoder, EncoderConfig, SubwordVocab};
use eventshift::evalsuite::{bucket_score, score, ReportMeta};
use eventshift::liw::{compute_weights, train_lm, weigh_corpus, LmArch, LmTrainConfig, LrSchedule};
use eventshift::nn::optim::Adam;
use eventshift::nn::tape::{sigmoid, Tape};
use eventshift::pipeline::{ExperimentConfig, RunMode, Technique};
use eventshift::synthbench::{
    all_pass, default_type_mix, generate, oracle_checks, write_outputs, ShiftSpec, Sizes,
};
use eventshift::tagger::{
    batch_loss_grads, train_tagger, TaggerKind, TaggerModel, TrainConfig, TrainItem,
};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::time::Instant;

fn verdict(n: usize, name: &str, result: Result<(), String>) {
    match result {
        Ok(()) => println!("criterion {n:2} [{name}]: PASS"),
        Err(msg) => {
            println!("criterion {n:2} [{name}]: FAIL - {msg}");
            panic!("criterion {n} [{name}] failed: {msg}");
        }
    }
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn argsort(xs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap().then(a.cmp(&b)));
    idx
}

#[test]
fn criterion_01_weight_equation_suite() {
    verdict(1, "instance-weight equation", (|| {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=10_000usize);
            let l: Vec<f64> = (0..n).map(|_| rng.gen_range(-10_000.0..=0.0)).collect();
            let ws = compute_weights(&l).map_err(|e| e.to_string())?;
            let sum: f64 = ws.alphas.iter().sum();
            ensure(
                (sum - n as f64).abs() <= 1e-6 * n as f64,
                format!("sum(alpha) = {sum}, expected {n}"),
            )?;
            let shift = rng.gen_range(-100.0..100.0);
            let shifted: Vec<f64> = l.iter().map(|x| x + shift).collect();
            let ws2 = compute_weights(&shifted).map_err(|e| e.to_string())?;
            for (a, b) in ws.alphas.iter().zip(&ws2.alphas) {
                ensure(
                    (a - b).abs() <= 1e-9 * a.abs().max(1.0),
                    format!("shift variance: {a} vs {b}"),
                )?;
            }
            // rank equality: alphas sorted by log-likelihood order are
            // non-decreasing (ties arise only from exp underflow at the
            // extreme end of the range)
            let ord = argsort(&l);
            ensure(
                ord.windows(2).all(|w| ws.alphas[w[0]] <= ws.alphas[w[1]]),
                "alpha ranks differ from log-likelihood ranks",
            )?;
        }
        // hand case in the likelihood domain: [0.2, 0.2, 0.6] -> [0.6, 0.6, 1.8]
        let ws = compute_weights(&[0.2f64.ln(), 0.2f64.ln(), 0.6f64.ln()])
            .map_err(|e| e.to_string())?;
        for (a, e) in ws.alphas.iter().zip([0.6, 0.6, 1.8]) {
            ensure((a - e).abs() < 1e-12, format!("hand case: {a} vs {e}"))?;
        }
        ensure(
            start.elapsed().as_secs() < 10,
            format!("took {:?}, budget 10 s", start.elapsed()),
        )
    })());
}

fn random_labeled(rng: &mut ChaCha8Rng, len: usize) -> (Corpus, Vec<usize>) {
    let words: Vec<String> = (0..len).map(|i| format!("w{i}")).collect();
    let text = words.join(" ");
    let gold: Vec<usize> = (0..len).filter(|_| rng.gen_bool(0.3)).collect();
    let mut doc = eventshift::corpus::parse_brat("", &text, "d0", "t").unwrap();
    for s in &mut doc.sentences {
        for &i in &gold {
            s.tokens[i].label = 1;
        }
    }
    (Corpus::new(vec![doc], Split::Test), gold)
}

#[test]
fn criterion_02_scoring_oracle() {
    verdict(2, "scoring vs brute force", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let len = rng.gen_range(1..=50usize);
            let (gold, gold_pos) = random_labeled(&mut rng, len);
            let pred: Vec<u8> = (0..len).map(|_| rng.gen_bool(0.3) as u8).collect();
            let pset: std::collections::HashSet<usize> = pred
                .iter()
                .enumerate()
                .filter(|(_, &p)| p == 1)
                .map(|(i, _)| i)
                .collect();
            let gset: std::collections::HashSet<usize> = gold_pos.iter().copied().collect();
            let (tp, fp, fn_) = (
                pset.intersection(&gset).count(),
                pset.difference(&gset).count(),
                gset.difference(&pset).count(),
            );
            let r = score(&[pred.clone()], &gold, ReportMeta::default())
                .map_err(|e| e.to_string())?;
            ensure(
                (r.overall.tp, r.overall.fp, r.overall.fn_) == (tp, fp, fn_),
                format!(
                    "counts {:?} vs oracle {:?}",
                    (r.overall.tp, r.overall.fp, r.overall.fn_),
                    (tp, fp, fn_)
                ),
            )?;

            // random IV/OOV split must decompose additively
            let mut iv = std::collections::HashSet::new();
            let mut oov = std::collections::HashSet::new();
            for t in gold.tokens() {
                if rng.gen_bool(0.5) {
                    iv.insert(t.text.to_lowercase());
                } else {
                    oov.insert(t.text.to_lowercase());
                }
            }
            let part = eventshift::corpus::IvOovPartition { iv, oov };
            let b = bucket_score(&[pred], &gold, &part, ReportMeta::default())
                .map_err(|e| e.to_string())?;
            let (bi, bo) = (b.iv.unwrap(), b.oov.unwrap());
            ensure(
                bi.tp + bo.tp == b.overall.tp
                    && bi.fp + bo.fp == b.overall.fp
                    && bi.fn_ + bo.fn_ == b.overall.fn_,
                "bucket counts do not decompose the totals",
            )?;
        }
        Ok(())
    })());
}

#[test]
fn criterion_03_cohens_kappa() {
    verdict(3, "Cohen's kappa", (|| {
        let a = [1u8, 1, 0, 0, 0, 0, 0, 0, 0, 0];
        ensure(
            cohens_kappa(&a, &a).unwrap() == 1.0,
            "identity is not exactly 1.0",
        )?;
        let b = [1u8, 0, 1, 0, 0, 0, 0, 0, 0, 0];
        let k = cohens_kappa(&a, &b).unwrap();
        ensure((k - 0.375).abs() < 1e-9, format!("hand case: {k}"))?;
        let d = cohens_kappa(&[1u8, 0], &[0u8, 1]).unwrap();
        ensure((d + 1.0).abs() < 1e-9, format!("disagreement case: {d}"))
    })());
}

#[test]
fn criterion_04_corpus_stats() {
    verdict(4, "corpus statistics", (|| {
        let spec = ShiftSpec {
            substitution_rate: 0.4,
            morph_pattern_rate: 0.5,
            type_mix: default_type_mix(),
            sizes: Sizes {
                source_sentences: 150,
                target_sentences: 90,
                raw_target_tokens: 1000,
                sentences_per_doc: 10,
            },
            seed: 11,
            source_leak: 0.1,
        };
        let out = generate(&spec).map_err(|e| e.to_string())?;
        let checks = oracle_checks(&out.source, &out.target, &out.gt);
        ensure(all_pass(&checks), format!("oracle checks failed: {checks:?}"))?;

        // conditional part: a local TimeBank copy reproducing the published
        // news-column numbers
        match std::env::var("TIMEBANK_DIR") {
            Err(_) => {
                println!("criterion  4 note: TIMEBANK_DIR unset, published-number check skipped");
                Ok(())
            }
            Ok(dir) => {
                let mut files: Vec<_> = std::fs::read_dir(&dir)
                    .map_err(|e| e.to_string())?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "tml"))
                    .collect();
                files.sort();
                let mut docs = Vec::new();
                for f in &files {
                    let text = std::fs::read_to_string(f).map_err(|e| e.to_string())?;
                    let id = f.file_stem().unwrap().to_string_lossy().to_string();
                    docs.push(parse_timeml(&text, &id, "news").map_err(|e| e.to_string())?);
                }
                let stats = corpus_stats(&Corpus::new(docs, Split::Test));
                ensure(
                    stats.n_files == 54
                        && stats.n_tokens == 18_263
                        && stats.n_events == 1_986
                        && (stats.event_density * 10_000.0).round() / 100.0 == 10.88,
                    format!("TimeBank stats {stats:?}"),
                )
            }
        }
    })());
}

fn ada_toy_items(seed: u64, n: usize, dim: usize) -> Vec<TrainItem<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(3..7);
            let feats = Array2::from_shape_fn((len, dim), |_| rng.gen_range(-1.0..1.0));
            let labels = (0..len).map(|i| (feats[(i, 0)] > 0.0) as u8).collect();
            TrainItem::new(feats, labels)
        })
        .collect()
}

fn ada_toy_tgt(seed: u64, n: usize, dim: usize) -> Vec<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(3..7);
            Array2::from_shape_fn((len, dim), |_| rng.gen_range(-0.2..1.8))
        })
        .collect()
}

#[test]
fn criterion_05_ada_mechanics() {
    verdict(5, "adversarial mechanics", (|| {
        // (a) scope isolation over 50 random alternation steps
        let mut m = TaggerModel::<f64>::new(TaggerKind::BilstmMlp, 4, 3, 5, 0);
        let cfg = AdaConfig {
            dropout: false,
            ..AdaConfig::default()
        };
        let mut tr = AdaTrainer::new(&mut m, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d_ids = tr.d.params(&m.store);
        let task = m.task_params();
        for step in 0..50 {
            let src = ada_toy_items(rng.gen(), rng.gen_range(1..5), 4);
            let tgt = ada_toy_tgt(rng.gen(), rng.gen_range(1..5), 4);
            let src_refs: Vec<&TrainItem<f64>> = src.iter().collect();
            let tgt_refs: Vec<&Array2<f64>> = tgt.iter().collect();

            let before = m.store.snapshot();
            tr.step1(&mut m, &src_refs, &tgt_refs, None);
            let mid = m.store.snapshot();
            ensure(
                task.iter().all(|id| before[id.0] == mid[id.0]),
                format!("step 1 touched a task parameter at step {step}"),
            )?;
            ensure(
                d_ids.iter().any(|id| before[id.0] != mid[id.0]),
                format!("step 1 left D unchanged at step {step}"),
            )?;
            tr.step2(&mut m, &src_refs, &tgt_refs, None);
            let after = m.store.snapshot();
            ensure(
                d_ids.iter().all(|id| mid[id.0] == after[id.0]),
                format!("step 2 touched D at step {step}"),
            )?;
        }

        // (b) λ = 0 trajectory equals plain training for 20 steps
        let template = TaggerModel::<f64>::new(TaggerKind::BilstmMlp, 4, 3, 5, 9);
        let mut ada_model = template.clone();
        let mut plain = template.clone();
        let cfg0 = AdaConfig {
            lambda: 0.0,
            dropout: false,
            ..AdaConfig::default()
        };
        let lr = cfg0.lr;
        let mut tr0 = AdaTrainer::new(&mut ada_model, cfg0);
        let mut adam = Adam::new(lr);
        let src = ada_toy_items(100, 6, 4);
        let tgt = ada_toy_tgt(101, 6, 4);
        for step in 0..20 {
            let src_refs: Vec<&TrainItem<f64>> =
                src.iter().skip(step % 3).take(3).collect();
            let tgt_refs: Vec<&Array2<f64>> = tgt.iter().skip(step % 3).take(3).collect();
            tr0.ada_step(&mut ada_model, &src_refs, &tgt_refs)
                .map_err(|e| e.to_string())?;
            let (_, grads) = batch_loss_grads(&plain, &src_refs, None);
            let scope = plain.task_params();
            adam.step(&mut plain.store, &grads, &scope);
            for id in plain.task_params() {
                let a = ada_model.store.value(id);
                let b = plain.store.value(id);
                for (x, y) in a.iter().zip(b.iter()) {
                    ensure(
                        (x - y).abs() < 1e-9,
                        format!("trajectories diverge at step {step}: {x} vs {y}"),
                    )?;
                }
            }
        }

        // (c) hand-derived closed form on a 1-dimensional toy
        let mut toy = TaggerModel::<f64>::new(TaggerKind::HeadOnly, 1, 1, 1, 3);
        let (a, b) = (0.7, -1.1);
        let set = |m: &mut TaggerModel<f64>, name: &str, v: Array2<f64>| {
            let id = m.store.id_by_name(name).unwrap();
            *m.store.value_mut(id) = v;
        };
        set(&mut toy, "tagger.mlp.w1", array![[a]]);
        set(&mut toy, "tagger.mlp.b1", array![[0.0]]);
        set(&mut toy, "tagger.mlp.w2", array![[b]]);
        set(&mut toy, "tagger.mlp.b2", array![[0.0]]);
        let mut drng = ChaCha8Rng::seed_from_u64(0);
        let d = DomainPredictor::new(&mut toy.store, &mut drng, 1, 2);
        // route the scalar representation through the ReLU layers untouched:
        // D(r) = u·r + c for r > 0
        let (u, c) = (0.9, 0.3);
        set(&mut toy, "domain.w0", array![[1.0, 0.0]]);
        set(&mut toy, "domain.b0", array![[0.0, 0.0]]);
        set(&mut toy, "domain.w1", array![[1.0, 0.0], [0.0, 0.0]]);
        set(&mut toy, "domain.b1", array![[0.0, 0.0]]);
        set(&mut toy, "domain.w2", array![[u], [0.0]]);
        set(&mut toy, "domain.b2", array![[c]]);

        let (x, y, lambda) = (0.8, 1.5, 2.0);
        let src_item = TrainItem::new(array![[x]], vec![1]);
        let tgt_feats = array![[y]];
        let (event, domain, grads) =
            step2_loss_grads(&toy, &d, &[&src_item], &[&tgt_feats], lambda, None);

        let z = b * (a * x).tanh();
        let expect_event = (1.0 + (-z).exp()).ln();
        let (dx, dy) = (u * x + c, u * y + c);
        let expect_domain =
            0.5 * ((1.0 + dx.exp()).ln() + (1.0 + (-dy).exp()).ln());
        let gz = sigmoid(z) - 1.0; // label 1, single token
        let th = (a * x).tanh();
        let expected = [
            ("tagger.mlp.w2", gz * th),
            ("tagger.mlp.b2", gz),
            ("tagger.mlp.w1", gz * b * (1.0 - th * th) * x),
            ("tagger.mlp.b1", gz * b * (1.0 - th * th)),
            // −λ·∂(domain)/∂u and ∂/∂c, through the frozen D
            (
                "domain.w2",
                -lambda * 0.5 * (sigmoid(dx) * x + (sigmoid(dy) - 1.0) * y),
            ),
            (
                "domain.b2",
                -lambda * 0.5 * (sigmoid(dx) + (sigmoid(dy) - 1.0)),
            ),
        ];
        ensure(
            (event - expect_event).abs() < 1e-12 && (domain - expect_domain).abs() < 1e-12,
            format!("toy losses: event {event} vs {expect_event}, domain {domain} vs {expect_domain}"),
        )?;
        for (name, want) in expected {
            let id = toy.store.id_by_name(name).unwrap();
            let got = grads.get(id).map(|g| g[(0, 0)]).unwrap_or(0.0);
            ensure(
                (got - want).abs() < 1e-6,
                format!("closed form {name}: {got} vs {want}"),
            )?;
        }
        Ok(())
    })());
}

#[test]
fn criterion_06_weighted_loss_gradients() {
    verdict(6, "weighted-loss finite differences", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for config in 0..20 {
            let dim = rng.gen_range(2..4usize);
            let kind = if rng.gen_bool(0.5) {
                TaggerKind::HeadOnly
            } else {
                TaggerKind::BilstmMlp
            };
            let mut m =
                TaggerModel::<f64>::new(kind, dim, rng.gen_range(2..4), rng.gen_range(2..4), rng.gen());
            assert!(m.store.n_scalars() <= 1000);
            let items: Vec<TrainItem<f64>> = (0..rng.gen_range(1..4usize))
                .map(|_| {
                    let len = rng.gen_range(2..6);
                    let feats = Array2::from_shape_fn((len, dim), |_| rng.gen_range(-1.0..1.0));
                    let labels = (0..len).map(|_| rng.gen_bool(0.4) as u8).collect();
                    TrainItem::weighted(feats, labels, rng.gen_range(0.1..3.0))
                })
                .collect();
            let refs: Vec<&TrainItem<f64>> = items.iter().collect();
            let (_, grads) = batch_loss_grads(&m, &refs, None);
            let eps = 1e-5;
            for id in m.store.ids() {
                let shape = m.store.value(id).dim();
                for r in 0..shape.0 {
                    for col in 0..shape.1 {
                        let orig = m.store.value(id)[(r, col)];
                        m.store.value_mut(id)[(r, col)] = orig + eps;
                        let up = batch_loss_grads(&m, &refs, None).0;
                        m.store.value_mut(id)[(r, col)] = orig - eps;
                        let down = batch_loss_grads(&m, &refs, None).0;
                        m.store.value_mut(id)[(r, col)] = orig;
                        let fd = (up - down) / (2.0 * eps);
                        let g = grads.get(id).map(|g| g[(r, col)]).unwrap_or(0.0);
                        let denom = g.abs().max(fd.abs()).max(1.0);
                        ensure(
                            (g - fd).abs() / denom < 1e-4,
                            format!(
                                "config {config} {}[{r},{col}]: {g} vs fd {fd}",
                                m.store.name(id)
                            ),
                        )?;
                    }
                }
            }
        }
        Ok(())
    })());
}

#[test]
fn criterion_07_daft_masking() {
    verdict(7, "masked-LM corruption", (|| {
        // corruption fraction over ≥100k positions
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let vocab_len = 50usize;
        let mut total = 0usize;
        let mut selected = 0usize;
        while total < 100_000 {
            let n = rng.gen_range(5..60);
            let ids: Vec<u32> = (0..n).map(|_| rng.gen_range(2..vocab_len as u32)).collect();
            let c = corrupt_pieces(&ids, vocab_len, 0.15, &mut rng);
            total += n;
            selected += c.selected.iter().filter(|&&s| s).count();
        }
        let frac = selected as f64 / total as f64;
        ensure(
            (0.13..=0.17).contains(&frac),
            format!("corruption fraction {frac} outside [0.13, 0.17]"),
        )?;

        // loss is confined to corrupted positions: scrambling the targets of
        // unselected positions changes nothing, and an empty selection is
        // identically zero
        let vocab = SubwordVocab::build(
            (0..40).flat_map(|i| vec![format!("word{i}"); 3]),
            2,
        );
        let enc = ContextualEncoder::<f64>::init_random("acc7", vocab, 8, 8, 1, 0);
        let s = eventshift::pipeline::raw_to_corpus("word1 word2 word3 word4 word5 word6", "x");
        let pieces = enc.pieces_of(s.sentences().next().unwrap());
        let c = corrupt_pieces(&pieces.ids, enc.vocab().len(), 0.5, &mut rng);
        let loss_with = |targets: Vec<usize>, weights: Vec<f64>| {
            let mut t = Tape::new(&enc.store);
            let outs = enc.forward_pieces(&mut t, &c.input_ids);
            let top = *outs.last().unwrap();
            let logits = enc.mlm_logits(&mut t, top);
            let l = t.softmax_ce(logits, targets, weights);
            t.value(l)[(0, 0)]
        };
        let weights: Vec<f64> = c.selected.iter().map(|&s| s as u8 as f64).collect();
        let base = loss_with(c.targets.clone(), weights.clone());
        let mut scrambled = c.targets.clone();
        for (i, sel) in c.selected.iter().enumerate() {
            if !sel {
                scrambled[i] = (scrambled[i] + 7) % enc.vocab().len();
            }
        }
        ensure(
            loss_with(scrambled, weights) == base,
            "uncorrupted positions leak into the loss",
        )?;
        ensure(
            loss_with(c.targets.clone(), vec![0.0; c.selected.len()]) == 0.0,
            "empty selection loss is not identically zero",
        )?;

        // epochs = 0 is the identity adaptation
        let src = eventshift::pipeline::raw_to_corpus("word1 word2 word3\nword4 word5", "s");
        let mixed = build_mixed_corpus(&src, &src, 0).map_err(|e| e.to_string())?;
        let cfg = DaftConfig {
            epochs: 0,
            ..DaftConfig::default()
        };
        let (adapted, _) = mlm_finetune(&enc, &mixed, &cfg).map_err(|e| e.to_string())?;
        let ecfg = EncoderConfig::new("acc7");
        for sent in src.sentences() {
            let a = enc
                .embed_contextual(sent, &EncoderConfig { layers_to_concat: 1, ..ecfg.clone() })
                .unwrap();
            let b = adapted
                .embed_contextual(sent, &EncoderConfig { layers_to_concat: 1, ..ecfg.clone() })
                .unwrap();
            ensure(a == b, "epochs=0 changed the features")?;
        }
        Ok(())
    })());
}

/// Committed LIW fixture: r = 0.6, 30% of source sentences drawn from the
/// target grammar, ≥200k raw target tokens, seed 8.
fn liw_fixture_spec() -> ShiftSpec {
    ShiftSpec {
        substitution_rate: 0.6,
        morph_pattern_rate: 0.5,
        type_mix: default_type_mix(),
        sizes: Sizes {
            source_sentences: 300,
            target_sentences: 50,
            raw_target_tokens: 200_000,
            sentences_per_doc: 10,
        },
        seed: 8,
        source_leak: 0.3,
    }
}

#[test]
fn criterion_08_liw_behavioral() {
    verdict(8, "instance weighting upweights target-flavored text", (|| {
        let start = Instant::now();
        let out = generate(&liw_fixture_spec()).map_err(|e| e.to_string())?;
        let tokens: Vec<String> = out
            .raw_target
            .split_whitespace()
            .map(str::to_string)
            .collect();
        ensure(tokens.len() >= 200_000, "fixture text too small")?;
        let arch = LmArch {
            emb_dim: 32,
            n_layers: 1,
            dropout: 0.0,
            min_count: 2,
        };
        let cfg = LmTrainConfig {
            epochs: 3,
            seed: 8,
            ..LmTrainConfig::default()
        };
        let (lm, _) = train_lm::<f64>(&tokens, arch, &cfg).map_err(|e| e.to_string())?;
        let (weighted, _) = weigh_corpus(&lm, &out.source, false).map_err(|e| e.to_string())?;
        let flags = &out.gt.source_contains_target_vocab;
        let mean = |want: bool| {
            let xs: Vec<f64> = weighted
                .iter()
                .zip(flags)
                .filter(|(_, &f)| f == want)
                .map(|(w, _)| w.alpha)
                .collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        let (with, without) = (mean(true), mean(false));
        ensure(
            with > without,
            format!("mean alpha with target vocab {with} <= without {without}"),
        )?;
        ensure(
            start.elapsed().as_secs() < 900,
            format!("took {:?}, budget 15 min", start.elapsed()),
        )
    })());
}

fn pooled_reprs(model: &TaggerModel<f64>, items: &[TrainItem<f64>]) -> Vec<Vec<f64>> {
    items
        .iter()
        .map(|it| {
            let mut t = Tape::new(&model.store);
            let (repr, _) = model.forward_nodes(&mut t, &it.feats, None);
            let v = t.value(repr);
            let mut mean = vec![0.0; v.ncols()];
            for row in v.rows() {
                for (m, x) in mean.iter_mut().zip(row) {
                    *m += x;
                }
            }
            for m in &mut mean {
                *m /= v.nrows() as f64;
            }
            mean
        })
        .collect()
}

/// Logistic-regression probe trained by full-batch gradient descent;
/// returns training accuracy.
fn probe_accuracy(pos: &[Vec<f64>], neg: &[Vec<f64>]) -> f64 {
    let dim = pos[0].len();
    // standardize so full-batch gradient descent converges regardless of
    // representation scale
    let all: Vec<&Vec<f64>> = pos.iter().chain(neg.iter()).collect();
    let n_all = all.len() as f64;
    let mut mu = vec![0.0; dim];
    let mut sd = vec![0.0; dim];
    for x in &all {
        for (m, v) in mu.iter_mut().zip(x.iter()) {
            *m += v / n_all;
        }
    }
    for x in &all {
        for ((s, m), v) in sd.iter_mut().zip(&mu).zip(x.iter()) {
            *s += (v - m) * (v - m) / n_all;
        }
    }
    let std: Vec<Vec<f64>> = all
        .iter()
        .map(|x| {
            x.iter()
                .zip(&mu)
                .zip(&sd)
                .map(|((v, m), s)| (v - m) / s.sqrt().max(1e-8))
                .collect()
        })
        .collect();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let data: Vec<(&Vec<f64>, f64)> = std
        .iter()
        .enumerate()
        .map(|(i, x)| (x, (i < pos.len()) as u8 as f64))
        .collect();
    let n = data.len() as f64;
    for _ in 0..3000 {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (x, y) in &data {
            let z: f64 = w.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>() + b;
            let e = sigmoid(z) - y;
            for (g, xi) in gw.iter_mut().zip(x.iter()) {
                *g += e * xi / n;
            }
            gb += e / n;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= 1.0 * g;
        }
        b -= 1.0 * gb;
    }
    let correct = data
        .iter()
        .filter(|(x, y)| {
            let z: f64 = w.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>() + b;
            (z > 0.0) == (*y > 0.5)
        })
        .count();
    correct as f64 / n
}

#[test]
fn criterion_09_ada_alignment() {
    verdict(9, "adversarial alignment defeats a domain probe", (|| {
        let start = Instant::now();
        let spec = ShiftSpec {
            substitution_rate: 1.0,
            morph_pattern_rate: 0.5,
            type_mix: default_type_mix(),
            sizes: Sizes {
                source_sentences: 120,
                target_sentences: 40,
                raw_target_tokens: 4_000,
                sentences_per_doc: 10,
            },
            seed: 9,
            source_leak: 0.0,
        };
        let out = generate(&spec).map_err(|e| e.to_string())?;
        // source-side subword vocabulary: infrequent and target-only words
        // decompose into characters and shared suffixes, as with a
        // pretrained tokenizer, keeping domain membership linearly decodable
        // without being trivially saturating for the discriminator
        let words = out.source.tokens().map(|t| t.text.clone());
        let vocab = SubwordVocab::build(words, 4);
        let enc = ContextualEncoder::<f64>::init_random("acc9", vocab, 16, 16, 1, 9);
        let raw_corpus = eventshift::pipeline::raw_to_corpus(&out.raw_target, "t");
        let feat =
            |c: &Corpus| eventshift::pipeline::featurize(&enc, c, 1).map_err(|e| e.to_string());
        let mut src_items = feat(&out.source)?;
        let mut tgt_all = feat(&raw_corpus)?;
        let scaler = eventshift::pipeline::FeatureScaler::fit(&src_items);
        scaler.apply_all(&mut src_items);
        scaler.apply_all(&mut tgt_all);
        let tgt_feats: Vec<Array2<f64>> = tgt_all
            .iter()
            .take(120)
            .map(|it| it.feats.clone())
            .collect();

        let template = TaggerModel::<f64>::new(TaggerKind::BilstmMlp, enc.feature_dim(1), 12, 12, 9);
        // no-transfer reference
        let mut baseline = template.clone();
        let tcfg = TrainConfig {
            max_epochs: 12,
            patience: 12,
            lr: 0.01,
            seed: 9,
            ..TrainConfig::default()
        };
        train_tagger(&mut baseline, &src_items, &src_items, &tcfg).map_err(|e| e.to_string())?;
        // adversarially aligned model
        let acfg = AdaConfig {
            lambda: 10.0,
            seed: 9,
            epochs: 25,
            lr: 0.01,
            dropout: false,
            d_hidden: 16,
            ..AdaConfig::default()
        };
        // run the alternation to its final state (no best-dev restore): the
        // probe inspects the aligned representation itself
        let mut ada_model = template.clone();
        let mut trainer = AdaTrainer::new(&mut ada_model, acfg.clone());
        let mut order_rng = ChaCha8Rng::seed_from_u64(acfg.seed);
        let mut cursor = 0usize;
        for _ in 0..acfg.epochs {
            let mut order: Vec<usize> = (0..src_items.len()).collect();
            use rand::seq::SliceRandom;
            order.shuffle(&mut order_rng);
            for chunk in order.chunks(acfg.batch_size) {
                let sb: Vec<&TrainItem<f64>> = chunk.iter().map(|&i| &src_items[i]).collect();
                let tb: Vec<&Array2<f64>> = (0..sb.len())
                    .map(|k| &tgt_feats[(cursor + k) % tgt_feats.len()])
                    .collect();
                cursor = (cursor + sb.len()) % tgt_feats.len();
                // extra discriminator steps keep it near-optimal so the
                // reversed gradient targets the true domain direction
                for _ in 0..3 {
                    trainer.step1(&mut ada_model, &sb, &tb, None);
                }
                trainer.step2(&mut ada_model, &sb, &tb, None);
            }
        }

        let tgt_items: Vec<TrainItem<f64>> = tgt_feats
            .iter()
            .map(|f| TrainItem::new(f.clone(), vec![0; f.nrows()]))
            .collect();
        let acc_base = probe_accuracy(
            &pooled_reprs(&baseline, &tgt_items),
            &pooled_reprs(&baseline, &src_items),
        );
        let acc_ada = probe_accuracy(
            &pooled_reprs(&ada_model, &tgt_items),
            &pooled_reprs(&ada_model, &src_items),
        );
        ensure(
            acc_base - acc_ada >= 0.10,
            format!("probe accuracy baseline {acc_base:.3} vs post-ADA {acc_ada:.3}: drop < 10 points"),
        )?;
        ensure(
            start.elapsed().as_secs() < 1800,
            format!("took {:?}, budget 30 min", start.elapsed()),
        )
    })());
}

/// End-to-end fixture: golden out-of-domain F1 numbers calibrated at these
/// exact seeds; reruns must land within ±0.5 F1.
const GOLDEN_F1: [(Technique, f64); 4] = [
    (Technique::None, 32.37),
    (Technique::Liw, 26.44),
    (Technique::Daft, 32.26),
    (Technique::Ada, 35.98),
];

fn e2e_config(dir: &Path, technique: Technique) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        source_train: dir.join("source.jsonl"),
        source_dev: dir.join("dev.jsonl"),
        target_test: dir.join("target.jsonl"),
        target_raw: Some(dir.join("target_raw.txt")),
        target_pos: None,
        encoder_checkpoint: None,
        technique,
        ada: None,
        liw: None,
        daft: None,
        encoder: eventshift::pipeline::EncoderSettings {
            emb_dim: 16,
            hidden: 16,
            n_layers: 2,
            layers_to_concat: 2,
            min_count: 2,
        },
        tagger: eventshift::pipeline::TaggerSettings {
            hidden: 16,
            mlp_dim: 16,
            train: TrainConfig {
                max_epochs: 60,
                patience: 20,
                lr: 0.01,
                seed: 10,
                ..TrainConfig::default()
            },
        },
        seed: 10,
        out_dir: dir.join(format!("run-{}", technique.as_str())),
    };
    match technique {
        Technique::Liw => {
            cfg.liw = Some(eventshift::pipeline::LiwSettings {
                arch: LmArch {
                    emb_dim: 32,
                    n_layers: 1,
                    dropout: 0.0,
                    min_count: 2,
                },
                train: LmTrainConfig {
                    epochs: 5,
                    ..LmTrainConfig::default()
                },
                per_token: true,
            });
        }
        Technique::Daft => {
            cfg.daft = Some(DaftConfig {
                epochs: 3,
                ..DaftConfig::default()
            });
        }
        Technique::Ada => {
            cfg.ada = Some(eventshift::pipeline::AdaSettings {
                lambdas: vec![0.5, 1.0],
                cfg: AdaConfig {
                    epochs: 30,
                    lr: 0.01,
                    dropout: false,
                    d_hidden: 32,
                    ..AdaConfig::default()
                },
            });
        }
        _ => {}
    }
    cfg
}

#[test]
fn criterion_10_end_to_end_regression() {
    verdict(10, "end-to-end pipeline regression", (|| {
        let dir = tempfile::tempdir().unwrap();
        let spec = ShiftSpec {
            substitution_rate: 0.5,
            morph_pattern_rate: 1.0,
            type_mix: default_type_mix(),
            sizes: Sizes {
                source_sentences: 200,
                target_sentences: 100,
                raw_target_tokens: 30_000,
                sentences_per_doc: 10,
            },
            seed: 10,
            source_leak: 0.15,
        };
        let out = generate(&spec).map_err(|e| e.to_string())?;
        write_outputs(&out, dir.path()).map_err(|e| e.to_string())?;
        let mut dev_spec = spec.clone();
        dev_spec.seed = 20;
        dev_spec.sizes.source_sentences = 40;
        let dev = generate(&dev_spec).map_err(|e| e.to_string())?;
        eventshift::corpus::write_jsonl_path(&dev.source, &dir.path().join("dev.jsonl"))
            .map_err(|e| e.to_string())?;

        let mut f1s = Vec::new();
        for (technique, golden) in GOLDEN_F1 {
            let cfg = e2e_config(dir.path(), technique);
            let summary = eventshift::pipeline::run(cfg, None, RunMode::Full)
                .map_err(|e| e.to_string())?
                .expect("full run returns a summary");
            let f1 = summary.test.overall.f1 * 100.0;
            println!(
                "criterion 10 note: {} out-of-domain F1 = {f1:.2} (dev {:.2})",
                technique.as_str(),
                summary.dev.overall.f1 * 100.0
            );
            if !golden.is_nan() {
                ensure(
                    (f1 - golden).abs() <= 0.5,
                    format!("{}: F1 {f1:.2} drifted from golden {golden:.2}", technique.as_str()),
                )?;
            }
            f1s.push((technique, f1));
        }
        let base = f1s[0].1;
        let best_gain = f1s[1..]
            .iter()
            .map(|(_, f)| f - base)
            .fold(f64::NEG_INFINITY, f64::max);
        ensure(
            best_gain >= 2.0,
            format!("no technique improves on the baseline by ≥2 F1 (best gain {best_gain:.2})"),
        )
    })());
}

#[test]
fn criterion_11_lm_training() {
    verdict(11, "language-model training", (|| {
        let spec = ShiftSpec {
            substitution_rate: 0.5,
            morph_pattern_rate: 0.5,
            type_mix: default_type_mix(),
            sizes: Sizes {
                source_sentences: 10,
                target_sentences: 10,
                raw_target_tokens: 30_000,
                sentences_per_doc: 10,
            },
            seed: 11,
            source_leak: 0.0,
        };
        let out = generate(&spec).map_err(|e| e.to_string())?;
        let tokens: Vec<String> = out
            .raw_target
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let arch = LmArch {
            emb_dim: 24,
            n_layers: 1,
            dropout: 0.0,
            min_count: 2,
        };
        let cfg = LmTrainConfig {
            epochs: 5,
            seed: 11,
            ..LmTrainConfig::default()
        };
        let (_, report) = train_lm::<f64>(&tokens, arch, &cfg).map_err(|e| e.to_string())?;
        let (first, last) = (report.epochs[0].val_ppl, report.epochs[4].val_ppl);
        ensure(
            last < first,
            format!("validation perplexity did not decrease: {first} -> {last}"),
        )?;

        // schedule: 20 → 5 → 1.25 after two plateaus
        let mut sched = LrSchedule::new(20.0, 4.0);
        let seq = [
            sched.observe(1.0), // improvement: stays 20
            sched.observe(2.0), // plateau: 5
            sched.observe(3.0), // plateau: 1.25
        ];
        ensure(
            seq == [20.0, 5.0, 1.25],
            format!("lr sequence {seq:?} != [20, 5, 1.25]"),
        )
    })());
}

//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use salientseq::analysis::{frequency_stats, per_pos_position, pos_histogram, position_mean, PositionMode};
use salientseq::classifier::{train_classifier, BlackBox, ClassifierConfig, ClassifierParams, CountingBlackBox};
use salientseq::corpus::{generate_planted_corpus, CorpusSplit, PlantedConfig, Task};
use salientseq::digest::sha256_file;
use salientseq::evaluate::{overlap_eval, MethodSaliencies};
use salientseq::nnkit::{gradient_check, Params};
use salientseq::postag::{Lexicon, PosTag};
use salientseq::prsalm::{build_prsalm, PrSalMRecord, PrSalMSource, PrSalMSplit};
use salientseq::saliency::{
    default_budget, kernel_shap, kernel_shap_sampling, mask_apply, masking_saliency, minmax_normalize, shap_sampled,
    shapley_exact, shapley_values, top_k, ExplainConfig,
};
use salientseq::seq2saliency::{s2s_inputs, s2s_predict, train_s2s, LossLog, S2SConfig, S2SParams};
use salientseq::tokenize::{train_vocab, Method, TokenizedSample, Vocab, MASK_ID};
use salientseq::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- fixtures

struct Toy {
    corpus: CorpusSplit,
    vocab: Vocab,
    model: ClassifierParams,
    val_accuracy: f64,
}

fn vocab_for(corpus: &CorpusSplit) -> Vocab {
    let texts: Vec<&str> = corpus.train.iter().map(|s| s.text.as_str()).collect();
    train_vocab(&texts, 200, Method::WordPiece).expect("vocab")
}

/// 1000 train / 100 val / 200 test planted corpus and its classifier.
fn toy() -> Toy {
    let corpus = generate_planted_corpus(&PlantedConfig::two_class(650, 100, 200, 101)).expect("corpus");
    assert_eq!((corpus.train.len(), corpus.test.len()), (1000, 200));
    let vocab = vocab_for(&corpus);
    let (model, report) = train_classifier(&corpus, &vocab, &ClassifierConfig::default(), 7).expect("classifier");
    Toy {
        corpus,
        vocab,
        model,
        val_accuracy: report.val_accuracy,
    }
}

struct Pipeline {
    toy: Toy,
    prsalm: PrSalMSplit,
    s2s: S2SParams,
    log: LossLog,
}

/// 2000 train / 500 val / 500 test planted corpus through PrSalM and S2S.
fn pipeline() -> Pipeline {
    let corpus = generate_planted_corpus(&PlantedConfig::two_class(1500, 500, 500, 202)).expect("corpus");
    let vocab = vocab_for(&corpus);
    let (model, report) = train_classifier(&corpus, &vocab, &ClassifierConfig::default(), 8).expect("classifier");
    let source = PrSalMSource {
        source_corpus: "planted".into(),
        checkpoint_sha256: salientseq::digest::sha256_hex(&model.to_bytes()),
        saliency: ExplainConfig::default(),
    };
    let prsalm = build_prsalm(&corpus, &vocab, &Lexicon::default(), &model, &source, 31).expect("prsalm");
    let (s2s, log) = train_s2s(
        &prsalm,
        &vocab,
        &S2SConfig {
            seed: 41,
            ..S2SConfig::default()
        },
    )
    .expect("s2s");
    Pipeline {
        toy: Toy {
            corpus,
            vocab,
            model,
            val_accuracy: report.val_accuracy,
        },
        prsalm,
        s2s,
        log,
    }
}

fn table_value(values: &[f64], mask: &[bool]) -> f64 {
    values[mask.iter().enumerate().map(|(i, &b)| (b as usize) << i).sum::<usize>()]
}

fn random_table(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..1usize << m).map(|_| rng.gen::<f64>()).collect()
}

/// Enumerated Kernel SHAP against the black box (coalitions filled with MASK).
fn enumerated_shap(model: &ClassifierParams, tok: &TokenizedSample, target: usize) -> Result<(Vec<f64>, f64)> {
    let m = tok.num_analyzable();
    let r = kernel_shap(m, default_budget(m), 0, |masks| {
        let batch = masks
            .iter()
            .map(|mk| mask_apply(tok, mk, MASK_ID))
            .collect::<Result<Vec<_>>>()?;
        Ok(model.predict_batch(&batch)?.into_iter().map(|p| p[target]).collect())
    })?;
    assert!(r.enumerated);
    Ok((r.phi, r.base_value))
}

// ---------------------------------------------------------------- C1 + C2

struct ShapCases {
    max_diff: f64,
    max_eff_exact: f64,
    max_eff_enum: f64,
    cases: usize,
}

fn shap_cases(toy: &Toy) -> ShapCases {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut out = ShapCases {
        max_diff: 0.0,
        max_eff_exact: 0.0,
        max_eff_enum: 0.0,
        cases: 0,
    };
    // 60 random games
    for c in 0..60 {
        let m = 2 + c % 7;
        let values = random_table(m, &mut rng);
        let exact = shapley_values(m, &values).unwrap();
        let k = kernel_shap(m, default_budget(m), c as u64, |masks| {
            Ok(masks.iter().map(|mk| table_value(&values, mk)).collect())
        })
        .unwrap();
        let full = values[(1 << m) - 1];
        for (a, b) in exact.iter().zip(&k.phi) {
            out.max_diff = out.max_diff.max((a - b).abs());
        }
        out.max_eff_exact = out
            .max_eff_exact
            .max((values[0] + exact.iter().sum::<f64>() - full).abs());
        out.max_eff_enum = out
            .max_eff_enum
            .max((k.base_value + k.phi.iter().sum::<f64>() - full).abs());
        out.cases += 1;
    }
    // 40 classifier cases, both classes as targets
    let samples: Vec<TokenizedSample> = toy
        .corpus
        .test
        .iter()
        .map(|s| s.tokenize(&toy.vocab))
        .filter(|t| t.num_analyzable() <= 8)
        .take(40)
        .collect();
    for (i, tok) in samples.iter().enumerate() {
        let target = i % 2;
        let exact = shapley_exact(&toy.model, tok, "c", target).unwrap();
        let (phi, base) = enumerated_shap(&toy.model, tok, target).unwrap();
        let full = toy.model.predict(&tok.ids).unwrap()[target];
        for (a, b) in exact.raw.iter().zip(&phi) {
            out.max_diff = out.max_diff.max((a - b).abs());
        }
        out.max_eff_exact = out
            .max_eff_exact
            .max((exact.base_value.unwrap() + exact.raw.iter().sum::<f64>() - full).abs());
        out.max_eff_enum = out.max_eff_enum.max((base + phi.iter().sum::<f64>() - full).abs());
        out.cases += 1;
    }
    out
}

// ---------------------------------------------------------------- C3

fn c3(toy: &Toy) -> Outcome {
    // 10-word samples (one trigger among nine filler words) explained with
    // forced sampling: 2000 draws never enumerate, although 2^10 - 2 < 2000
    let filler = PlantedConfig::two_class(1, 0, 0, 0).filler_vocab;
    let mut worst_ratio = 0.0f64;
    let mut calls = 0;
    let mut cases = 0;
    for (k, trigger) in TRIGGERS.iter().enumerate() {
        let mut words: Vec<&str> = filler.iter().cycle().skip(3 * k).take(9).map(String::as_str).collect();
        words.insert((2 * k + 1) % 10, trigger);
        let tok = salientseq::tokenize::tokenize(&words.join(" "), &toy.vocab);
        let m = tok.num_analyzable();
        if m != 10 {
            return outcome(false, format!("constructed sample has {m} pieces, expected 10"));
        }
        for target in 0..2 {
            let exact = shapley_exact(&toy.model, &tok, "c3", target).unwrap();
            let scale = exact.raw.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let mut total = 0.0;
            for seed in 0..20u64 {
                let r = kernel_shap_sampling(m, 2000, seed, |masks| {
                    let batch = masks
                        .iter()
                        .map(|mk| mask_apply(&tok, mk, MASK_ID))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(toy
                        .model
                        .predict_batch(&batch)?
                        .into_iter()
                        .map(|p| p[target])
                        .collect())
                })
                .unwrap();
                assert!(!r.enumerated);
                calls += r.evaluations;
                total += exact.raw.iter().zip(&r.phi).map(|(a, b)| (a - b).abs()).sum::<f64>() / m as f64;
            }
            worst_ratio = worst_ratio.max(total / 20.0 / scale);
            cases += 1;
        }
    }

    // for information: i.i.d. uniform value tables, where the Shapley values
    // are small next to the per-coalition noise
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let values = random_table(10, &mut rng);
    let exact_rand = shapley_values(10, &values).unwrap();
    let scale_rand = exact_rand.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut total_rand = 0.0;
    for seed in 0..20u64 {
        let r = kernel_shap_sampling(10, 2000, seed, |masks| {
            Ok(masks.iter().map(|mk| table_value(&values, mk)).collect())
        })
        .unwrap();
        total_rand += exact_rand.iter().zip(&r.phi).map(|(a, b)| (a - b).abs()).sum::<f64>() / 10.0;
    }
    outcome(
        worst_ratio < 0.05,
        format!(
            "{cases} classifier games x 20 seeds: worst mean |dev| / max|phi| = {worst_ratio:.4} (bound 0.05), ~{} distinct coalitions per run; info: iid random table gives {:.4}",
            calls / (cases * 20),
            total_rand / 20.0 / scale_rand
        ),
    )
}

// ---------------------------------------------------------------- C4

fn c4() -> Outcome {
    let mut runner = TestRunner::new(PtConfig {
        cases: 10_000,
        failure_persistence: None,
        ..PtConfig::default()
    });
    let strategy = (
        proptest::collection::vec(-1e3f64..1e3, 1..40),
        0.01f64..100.0,
        -100.0f64..100.0,
    );
    let result = runner.run(&strategy, |(raw, a, b)| {
        let (norm, degenerate) = minmax_normalize(&raw).unwrap();
        prop_assert_eq!(norm.len(), raw.len());
        prop_assert!(norm.iter().all(|v| (0.0..=1.0).contains(v)));
        let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if min == max {
            prop_assert!(degenerate);
            prop_assert!(norm.iter().all(|v| *v == 0.5));
            return Ok(());
        }
        prop_assert!(!degenerate);
        let imin = raw.iter().position(|v| *v == min).unwrap();
        let imax = raw.iter().position(|v| *v == max).unwrap();
        prop_assert_eq!(norm[imin], 0.0);
        prop_assert_eq!(norm[imax], 1.0);
        prop_assert_eq!(top_k(&norm, 1), top_k(&raw, 1));
        let neg: Vec<f64> = raw.iter().map(|v| -v).collect();
        let nneg: Vec<f64> = norm.iter().map(|v| -v).collect();
        prop_assert_eq!(top_k(&nneg, 1), top_k(&neg, 1));
        let shifted: Vec<f64> = raw.iter().map(|v| a * v + b).collect();
        let (norm2, _) = minmax_normalize(&shifted).unwrap();
        for (x, y) in norm.iter().zip(&norm2) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        Ok(())
    });
    let degenerate_ok = [vec![5.0], vec![2.0, 2.0, 2.0], vec![-3.5; 7]]
        .iter()
        .all(|v| minmax_normalize(v).unwrap() == (vec![0.5; v.len()], true));
    match result {
        Ok(()) if degenerate_ok => outcome(true, "10000 random vectors plus degenerate cases"),
        Ok(()) => outcome(false, "degenerate inputs not mapped to 0.5 with flag"),
        Err(e) => outcome(false, format!("{e}")),
    }
}

// ---------------------------------------------------------------- C5

fn c5() -> Outcome {
    let s2s_cfg = S2SConfig {
        token_emb_dim: 8,
        pos_emb_dim: 4,
        model_dim: 8,
        heads: 1,
        ffn_dim: 16,
        max_len: 16,
        seed: 1,
        ..S2SConfig::default()
    };
    let s2s = S2SParams::init(&s2s_cfg, 12).unwrap();
    let ids = [5, 6, 7, 8, 9, 10];
    let pos = [
        PosTag::Noun,
        PosTag::Verb,
        PosTag::Det,
        PosTag::Noun,
        PosTag::Adj,
        PosTag::Punct,
    ];
    let target = [0.1, 0.0, 1.0, 0.3, 0.5, 0.8];
    let r_s2s = gradient_check(&s2s, 1e-5, |p| p.loss_and_grad(&ids, &pos, &target)).unwrap();

    let clf_cfg = ClassifierConfig {
        d_model: 8,
        heads: 2,
        ffn_dim: 16,
        classes: 3,
        ..ClassifierConfig::default()
    };
    let clf = ClassifierParams::init(&clf_cfg, 12, 2).unwrap();
    let r_clf = gradient_check(&clf, 1e-5, |p| p.loss_and_grad(&ids, 2)).unwrap();

    // sentinel: a gradient doubled on one tensor must be caught
    let r_bad = gradient_check(&s2s, 1e-5, |p| {
        let (l, mut g) = p.loss_and_grad(&ids, &pos, &target)?;
        for (name, t) in g.named_mut() {
            if name == "head.w" {
                t.scale(2.0);
            }
        }
        Ok((l, g))
    })
    .unwrap();
    let pass = r_s2s.max_rel_error < 1e-4 && r_clf.max_rel_error < 1e-4 && r_bad.max_rel_error > 1e-2;
    outcome(
        pass,
        format!(
            "s2s {:.2e}, classifier {:.2e}, corrupted sentinel {:.2e}",
            r_s2s.max_rel_error, r_clf.max_rel_error, r_bad.max_rel_error
        ),
    )
}

// ---------------------------------------------------------------- C6

const TRIGGERS: [&str; 6] = ["zark", "blim", "quov", "frop", "dax", "wunt"];

fn top1_is_trigger(raw: &[f64], tok: &TokenizedSample, triggers: &[&str]) -> bool {
    let best = top_k(raw, 1)[0];
    let analyzable = tok.analyzable_indices();
    let word = tok.word_of[analyzable[best]].unwrap();
    raw[best] > 0.0 && triggers.contains(&tok.words[word].as_str())
}

fn c6(toy: &Toy) -> Outcome {
    let (mut shap_hits, mut mask_hits) = (0, 0);
    let test = &toy.corpus.test;
    for (i, s) in test.iter().enumerate() {
        let tok = s.tokenize(&toy.vocab);
        let shap = shap_sampled(
            &toy.model,
            &tok,
            &s.id,
            s.label,
            default_budget(tok.num_analyzable()),
            i as u64,
        )
        .unwrap();
        let mask = masking_saliency(&toy.model, &tok, &s.id, s.label).unwrap();
        shap_hits += top1_is_trigger(&shap.raw, &tok, &TRIGGERS) as usize;
        mask_hits += top1_is_trigger(&mask.raw, &tok, &TRIGGERS) as usize;
    }
    let n = test.len() as f64;
    let (sf, mf) = (shap_hits as f64 / n, mask_hits as f64 / n);
    outcome(
        toy.val_accuracy >= 0.95 && sf >= 0.9 && mf >= 0.9,
        format!(
            "val acc {:.3}; trigger top-1: shap {sf:.3}, masking {mf:.3} over {} test samples",
            toy.val_accuracy,
            test.len()
        ),
    )
}

// ---------------------------------------------------------------- C7, C8, C11

fn c7(p: &Pipeline) -> Outcome {
    let chunks = &p.log.train_chunks;
    let val = &p.log.val_epochs;
    let (first, last) = (chunks[0], *chunks.last().unwrap());
    let pass =
        p.prsalm.train.len() >= 2000 && p.prsalm.val.len() >= 500 && last <= 0.5 * first && val.last() < val.first();
    outcome(
        pass,
        format!(
            "{} train / {} val records; train chunk loss {first:.3} -> {last:.3} ({} chunks); val {:.3} -> {:.3}",
            p.prsalm.train.len(),
            p.prsalm.val.len(),
            chunks.len(),
            val[0],
            val.last().unwrap()
        ),
    )
}

fn c8(p: &Pipeline) -> Outcome {
    let lex = Lexicon::default();
    let samples: Vec<MethodSaliencies> = p
        .toy
        .corpus
        .test
        .iter()
        .zip(&p.prsalm.test)
        .map(|(s, r)| {
            assert_eq!(s.id, r.id);
            let tok = s.tokenize(&p.toy.vocab);
            let mask = masking_saliency(&p.toy.model, &tok, &s.id, s.label).unwrap();
            let (ids, pos) = s2s_inputs(&tok, &lex).unwrap();
            let pred = s2s_predict(&p.s2s, &ids, &pos, &s.id, s.label).unwrap();
            MethodSaliencies {
                id: s.id.clone(),
                shap: r.saliency_raw.clone(),
                masking: mask.raw,
                s2s: pred.raw,
            }
        })
        .collect();
    let report = overlap_eval(&samples, 10, 50, 0.3, None).unwrap();
    for line in report.to_table().lines() {
        println!("      {line}");
    }
    outcome(
        report.s2s_wins * 2 > report.n_groups,
        format!(
            "s2s ahead in {}/{} groups (mean overlap s2s {:.3} vs masking {:.3})",
            report.s2s_wins, report.n_groups, report.mean_s2s_vs_shap, report.mean_masking_vs_shap
        ),
    )
}

fn c11(p: &Pipeline) -> Outcome {
    let lex = Lexicon::default();
    let counter = CountingBlackBox::new(&p.toy.model);
    let mut predictions = 0;
    for s in &p.toy.corpus.test {
        let tok = s.tokenize(&p.toy.vocab);
        let (ids, pos) = s2s_inputs(&tok, &lex).unwrap();
        s2s_predict(&p.s2s, &ids, &pos, &s.id, s.label).unwrap();
        predictions += 1;
    }
    let during = counter.calls();
    // the counter itself works
    let tok = p.toy.corpus.test[0].tokenize(&p.toy.vocab);
    masking_saliency(&counter, &tok, "probe", 0).unwrap();
    let probe = counter.calls();
    outcome(
        during == 0 && probe == tok.num_analyzable() + 1,
        format!("{predictions} predictions, {during} black-box calls (probe registered {probe})"),
    )
}

// ---------------------------------------------------------------- C9

fn synthetic_records(n: usize, seed: u64) -> Vec<PrSalMRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tags = [PosTag::Noun, PosTag::Verb, PosTag::Adj, PosTag::Det, PosTag::Adv];
    (0..n)
        .map(|i| {
            let m = rng.gen_range(1..=15);
            // coarse values so that ties occur
            let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0..6) as f64 / 5.0 - 0.4).collect();
            let (norm, degenerate) = minmax_normalize(&raw).unwrap();
            PrSalMRecord {
                id: format!("s{i}"),
                dataset_name: "synthetic".into(),
                tokenizer: Method::Bpe,
                task: Task::Classification,
                label: 0,
                predicted: 0,
                tokens: (0..m).map(|k| format!("t{k}")).collect(),
                pos: (0..m).map(|_| tags[rng.gen_range(0..tags.len())]).collect(),
                position_ratio: (1..=m).map(|k| k as f64 / m as f64).collect(),
                frequency: (0..m).map(|_| rng.gen_range(1..500)).collect(),
                saliency_raw: raw,
                saliency_norm: norm,
                degenerate,
            }
        })
        .collect()
}

/// Top-θ by selection: repeatedly take the first maximum among unused.
fn oracle_top(raw: &[f64], theta: f64) -> Vec<bool> {
    let m = raw.len();
    let mut k = 0;
    while (k as f64) < theta * m as f64 - 1e-9 {
        k += 1;
    }
    let k = k.clamp(1, m);
    let mut used = vec![false; m];
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..m {
            if !used[i] && best.map_or(true, |b| raw[i] > raw[b]) {
                best = Some(i);
            }
        }
        used[best.unwrap()] = true;
    }
    used
}

fn c9() -> Outcome {
    let records = synthetic_records(100, 9);
    let mut failures = Vec::new();
    let tags = [
        PosTag::Noun,
        PosTag::Verb,
        PosTag::Adj,
        PosTag::Det,
        PosTag::Adv,
        PosTag::Num,
    ];
    for theta in [0.1, 0.2, 0.3, 0.5, 1.0] {
        // histogram: integer counts compared exactly
        let hist = pos_histogram(&records, theta).unwrap();
        let mut counts: BTreeMap<PosTag, usize> = BTreeMap::new();
        let (mut pos_sum, mut pos_n) = (0.0, 0usize);
        for r in &records {
            for (i, sel) in oracle_top(&r.saliency_raw, theta).into_iter().enumerate() {
                if sel {
                    *counts.entry(r.pos[i]).or_default() += 1;
                    pos_sum += r.position_ratio[i];
                    pos_n += 1;
                }
            }
        }
        for tag in tags {
            let got = hist
                .get(&tag)
                .map(|v| (v * records.len() as f64).round() as usize)
                .unwrap_or(0);
            if got != counts.get(&tag).copied().unwrap_or(0) {
                failures.push(format!("pos_histogram {tag} @ {theta}"));
            }
        }
        if (position_mean(&records, theta).unwrap() - pos_sum / pos_n as f64).abs() > 1e-12 {
            failures.push(format!("position_mean @ {theta}"));
        }
        for tag in tags {
            for mode in [PositionMode::Theta(theta), PositionMode::All] {
                let (mut s, mut n) = (0.0, 0usize);
                for r in &records {
                    let sel = match mode {
                        PositionMode::Theta(t) => oracle_top(&r.saliency_raw, t),
                        PositionMode::All => vec![true; r.len()],
                    };
                    for i in 0..r.len() {
                        if sel[i] && r.pos[i] == tag {
                            s += r.position_ratio[i];
                            n += 1;
                        }
                    }
                }
                let expect = (n > 0).then(|| s / n as f64);
                let got = per_pos_position(&records, tag, mode).unwrap();
                let ok = match (got, expect) {
                    (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
                    (None, None) => true,
                    _ => false,
                };
                if !ok {
                    failures.push(format!("per_pos_position {tag} {mode:?}"));
                }
            }
            let mut top = Vec::new();
            let mut all = Vec::new();
            for r in &records {
                let sel = oracle_top(&r.saliency_raw, theta);
                for i in 0..r.len() {
                    if r.pos[i] == tag {
                        all.push(r.frequency[i]);
                        if sel[i] {
                            top.push(r.frequency[i]);
                        }
                    }
                }
            }
            let stats = frequency_stats(&records, tag, theta).unwrap();
            for (name, list, got) in [("top", top, stats.top), ("all", all, stats.all)] {
                let expect = if list.is_empty() {
                    None
                } else {
                    let mut s = list.clone();
                    s.sort();
                    let mean = s.iter().sum::<u64>() as f64 / s.len() as f64;
                    Some((mean, s[(s.len() - 1) / 2]))
                };
                let ok = match (got, expect) {
                    (Some(g), Some((mean, median))) => (g.mean - mean).abs() <= 1e-12 && g.median == median,
                    (None, None) => true,
                    _ => false,
                };
                if !ok {
                    failures.push(format!("frequency_stats {tag} {name} @ {theta}"));
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "100 synthetic records, 5 theta values, all four statistics match the recount".to_string()
        } else {
            failures.join(", ")
        },
    )
}

// ---------------------------------------------------------------- C10

fn run_cli(dir: &Path, args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_salientseq"))
        .current_dir(dir)
        .args(args)
        .env("SALIENTSEQ_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline_cli(dir: &Path, jobs: &str) -> std::result::Result<(), String> {
    let j = ["--jobs", jobs];
    let stages: Vec<Vec<&str>> = vec![
        vec![
            "gen-corpus",
            "--out",
            "planted.jsonl",
            "--n-per-class",
            "120",
            "--val",
            "40",
            "--test",
            "60",
        ],
        vec!["train-tokenizer", "--corpus", "planted.jsonl", "--out", "vocab.txt"],
        vec![
            "train-classifier",
            "--corpus",
            "planted.jsonl",
            "--vocab",
            "vocab.txt",
            "--out",
            "clf.ckpt",
            "--epochs",
            "2",
        ],
        vec![
            "build-prsalm",
            "--corpus",
            "planted.jsonl",
            "--vocab",
            "vocab.txt",
            "--checkpoint",
            "clf.ckpt",
            "--out",
            "prsalm.jsonl",
        ],
        vec!["analyze", "--prsalm", "prsalm.jsonl", "--out", "analysis.json"],
        vec![
            "train-s2s",
            "--prsalm",
            "prsalm.jsonl",
            "--vocab",
            "vocab.txt",
            "--out",
            "s2s.ckpt",
            "--epochs",
            "2",
        ],
        vec![
            "infer-s2s",
            "--s2s",
            "s2s.ckpt",
            "--vocab",
            "vocab.txt",
            "--prsalm",
            "prsalm.jsonl",
            "--out",
            "s2s_test.jsonl",
        ],
        vec![
            "explain",
            "--method",
            "shap",
            "--corpus",
            "planted.jsonl",
            "--samples",
            "20",
            "--vocab",
            "vocab.txt",
            "--checkpoint",
            "clf.ckpt",
            "--budget",
            "40",
            "--out",
            "explain.jsonl",
        ],
        vec![
            "eval-overlap",
            "--prsalm",
            "prsalm.jsonl",
            "--corpus",
            "planted.jsonl",
            "--vocab",
            "vocab.txt",
            "--checkpoint",
            "clf.ckpt",
            "--s2s",
            "s2s.ckpt",
            "--groups",
            "6",
            "--samples",
            "10",
            "--out",
            "overlap.json",
        ],
        vec!["render", "--prsalm", "prsalm.jsonl", "--out", "heat.html"],
    ];
    for stage in stages {
        let mut args = stage.clone();
        args.extend(j);
        run_cli(dir, &args)?;
    }
    Ok(())
}

fn hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_file() {
            out.insert(
                p.file_name().unwrap().to_string_lossy().into_owned(),
                sha256_file(&p).unwrap(),
            );
        }
    }
    out
}

fn c10() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("jobs1"), root.path().join("jobs4"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    if let Err(e) = pipeline_cli(&a, "1").and_then(|_| pipeline_cli(&b, "4")) {
        return outcome(false, e);
    }
    let (ha, hb) = (hashes(&a), hashes(&b));
    let differing: Vec<&String> = ha.keys().filter(|k| ha.get(*k) != hb.get(*k)).collect();

    // replay two stages from their manifests alone
    let replay = root.path().join("replay");
    std::fs::create_dir_all(&replay).unwrap();
    for f in ["planted.jsonl", "vocab.txt", "clf.ckpt", "clf.ckpt.json"] {
        std::fs::copy(a.join(f), replay.join(f)).unwrap();
    }
    std::fs::copy(a.join("prsalm.jsonl.manifest.json"), replay.join("m1.json")).unwrap();
    std::fs::copy(a.join("s2s.ckpt.manifest.json"), replay.join("m2.json")).unwrap();
    let replayed = run_cli(
        &replay,
        &["--config", "m1.json", "build-prsalm", "--out", "prsalm.jsonl"],
    )
    .and_then(|_| run_cli(&replay, &["--config", "m2.json", "train-s2s", "--out", "s2s.ckpt"]));
    if let Err(e) = replayed {
        return outcome(false, format!("replay failed: {e}"));
    }
    let hr = hashes(&replay);
    let replay_ok = ["prsalm.jsonl", "s2s.ckpt", "s2s.ckpt.loss.csv"]
        .iter()
        .all(|f| hr.get(*f) == ha.get(*f));
    outcome(
        differing.is_empty() && replay_ok && ha.len() >= 20,
        format!(
            "{} files compared between --jobs 1 and --jobs 4, {} differ; manifest replay identical: {replay_ok}",
            ha.len(),
            differing.len()
        ),
    )
}

// ---------------------------------------------------------------- main

fn main() {
    let start = Instant::now();
    let mut results: Vec<(&str, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: &'static str, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!(
            "[{id}] {} {name}: {} ({secs:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, name, o, secs));
    };

    let t = Instant::now();
    let toy = toy();
    let toy_secs = t.elapsed().as_secs_f64();
    println!("toy classifier fixture ready in {toy_secs:.1}s");

    run("C1", "shapley oracle equivalence", &mut || {
        let t = Instant::now();
        let r = shap_cases(&toy);
        let secs = t.elapsed().as_secs_f64() + toy_secs;
        outcome(
            r.cases >= 100 && r.max_diff < 1e-6 && secs < 60.0,
            format!(
                "{} cases, max |enumerated - exact| {:.2e}, {secs:.1}s incl. fixture",
                r.cases, r.max_diff
            ),
        )
    });
    run("C2", "efficiency / additivity", &mut || {
        let r = shap_cases(&toy);
        outcome(
            r.max_eff_exact < 1e-9 && r.max_eff_enum < 1e-6,
            format!(
                "max residual exact {:.2e}, enumerated {:.2e}",
                r.max_eff_exact, r.max_eff_enum
            ),
        )
    });
    run("C3", "sampled Kernel SHAP accuracy", &mut || c3(&toy));
    run("C4", "min-max invariants", &mut c4);
    run("C5", "gradient fidelity", &mut c5);
    run("C6", "planted-signal saliency sanity", &mut || {
        let t = Instant::now();
        let mut o = c6(&toy);
        let secs = t.elapsed().as_secs_f64() + toy_secs;
        if secs >= 300.0 {
            o.pass = false;
        }
        o.detail.push_str(&format!("; {secs:.1}s incl. fixture"));
        o
    });
    run("C9", "analysis oracles", &mut c9);
    run("C10", "determinism and reproducibility", &mut c10);

    let t = Instant::now();
    let pipe = pipeline();
    println!(
        "PrSalM + Seq2Saliency fixture ready in {:.1}s",
        t.elapsed().as_secs_f64()
    );
    run("C7", "Seq2Saliency loss trend", &mut || c7(&pipe));
    run("C8", "overlap with SHAP: S2S vs masking", &mut || c8(&pipe));
    run("C11", "zero-query inference", &mut || c11(&pipe));

    let failed: Vec<&str> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed in {:.1}s{}",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", failed.join(", "))
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

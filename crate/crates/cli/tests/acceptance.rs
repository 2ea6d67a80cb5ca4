//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. `BIANT_ACCEPTANCE=1,5` runs a subset.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use biant_core::data::{generate_corpus, Corpus, ScenarioConfig};
use biant_core::eval::{edit_distance, evaluate, EdConfig};
use biant_core::generate::{generate_candidates, GenerationConfig, Strategy};
use biant_core::model::{
    combined_loss, finite_difference_check, forward, init_params, instance_gradient, optimizer_step, perturb,
    task_loss, tiny_check_batch, AdamState, LossWeights, ModelConfig, Parameters,
};
use biant_core::prompt::{encode_instance, PreambleMode, TokenSpace};
use biant_core::sequence::{make_backward_instance, make_forward_instances, WindowConfig};
use biant_core::train::{epoch_order, train, TrainConfig};
use biant_core::vocab::{ActionLabel, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn default_corpus() -> (Vocabulary, Corpus, TokenSpace) {
    let vocab = Vocabulary::demo();
    let corpus = generate_corpus(&vocab, &ScenarioConfig::default()).expect("default corpus");
    let space = TokenSpace::new(&vocab, ModelConfig::default().context_len);
    (vocab, corpus, space)
}

/// Independent full-matrix Levenshtein.
fn reference_ed(a: &[u32], b: &[u32]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![0usize; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        d[at(i, 0)] = i;
    }
    for j in 0..=m {
        d[at(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[at(i - 1, j - 1)] + usize::from(a[i - 1] != b[j - 1]);
            d[at(i, j)] = sub.min(d[at(i - 1, j)] + 1).min(d[at(i, j - 1)] + 1);
        }
    }
    d[at(n, m)]
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = EdConfig::default();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let mut seq = || -> Vec<u32> { (0..rng.random_range(0..=25)).map(|_| rng.random_range(0..50)).collect() };
        let (a, b) = (seq(), seq());
        if edit_distance(&a, &b, &cfg) != reference_ed(&a, &b) {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} of 1000 pairs disagree"))?;
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "1000/1000 pairs exact in {:.3}s",
        start.elapsed().as_secs_f64()
    ))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::tiny();
    ensure(cfg.vocab_size == 12 && cfg.embed_dim == 8, || {
        "tiny config drifted".into()
    })?;
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let mut params = init_params(&ModelConfig { seed, ..cfg }).map_err(|e| e.to_string())?;
        perturb(&mut params, 0.3, seed + 100);
        let batch = tiny_check_batch(cfg.vocab_size, 14, seed);
        let report = finite_difference_check(&params, &batch, LossWeights { alpha: 1.0, beta: 0.5 }, 1e-4)
            .map_err(|e| e.to_string())?;
        worst = worst.max(report.max_rel_err);
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e}"))?;
    within(start.elapsed(), 60.0)?;
    Ok(format!("max relative error {worst:.3e} over 3 seeds, eps 1e-4"))
}

fn backward_free_loop(corpus: &Corpus, space: &TokenSpace, cfg: &TrainConfig, model: &ModelConfig) -> Parameters {
    let set: Vec<_> = corpus
        .train
        .iter()
        .flat_map(|v| make_forward_instances(v, &cfg.window))
        .map(|inst| encode_instance(space, &inst, cfg.preamble).unwrap())
        .collect();
    let mut params = init_params(model).unwrap();
    let mut opt = AdamState::new(&params);
    for epoch in 0..cfg.epochs {
        for idx in epoch_order(set.len(), cfg.seed, epoch).chunks(cfg.batch_size) {
            let mut grads = params.zeros_like();
            for &i in idx {
                let mut g = params.zeros_like();
                instance_gradient(&params, &set[i], 1.0, &mut g).unwrap();
                grads.add_scaled(&g, 1.0);
            }
            grads.scale(1.0 / idx.len() as f64);
            optimizer_step(&mut params, &grads, &mut opt, cfg.lr);
        }
    }
    params
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (lf, lb) = (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
        let (alpha, beta) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        let got = combined_loss(lf, lb, LossWeights { alpha, beta });
        let want = alpha * lf + beta * lb;
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    ensure(worst <= f64::EPSILON, || format!("linearity error {worst:e}"))?;

    let vocab = Vocabulary::demo();
    let corpus = generate_corpus(
        &vocab,
        &ScenarioConfig {
            num_videos: 20,
            ..Default::default()
        },
    )
    .unwrap();
    let space = TokenSpace::new(&vocab, 96);
    let model = ModelConfig {
        vocab_size: space.size(),
        embed_dim: 16,
        mlp_hidden: 32,
        seed: 4,
        ..Default::default()
    };
    let cfg = TrainConfig {
        weights: LossWeights { alpha: 1.0, beta: 0.0 },
        epochs: 2,
        seed: 4,
        ..Default::default()
    };
    let (trained, _) = train(&corpus.train, &space, &cfg, &model).map_err(|e| e.to_string())?;
    let reference = backward_free_loop(&corpus, &space, &cfg, &model);
    let identical = trained
        .tensors()
        .iter()
        .zip(reference.tensors())
        .all(|((_, a), (_, b))| a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    ensure(identical, || {
        "beta=0 trajectory differs from the backward-free loop".into()
    })?;
    Ok(format!(
        "100 triples, max rel error {worst:e}; beta=0 parameters bitwise equal after {} epochs",
        cfg.epochs
    ))
}

fn criterion_4() -> Outcome {
    let (_, corpus, _) = default_corpus();
    let default = WindowConfig::default();
    ensure((default.n_obs_bwd, default.z_bwd()) == (16, 12), || {
        format!("default reversed split is ({}, {})", default.n_obs_bwd, default.z_bwd())
    })?;
    let mut checked = 0;
    for n_obs_bwd in [4, 8, 16, 24] {
        let window = WindowConfig { n_obs_bwd, ..default };
        for video in corpus.all() {
            for fwd in make_forward_instances(video, &window) {
                let bwd = make_backward_instance(&fwd, n_obs_bwd).map_err(|e| e.to_string())?;
                let mut reversed: Vec<ActionLabel> = bwd.observed.iter().chain(&bwd.future).copied().collect();
                reversed.reverse();
                let forward: Vec<ActionLabel> = fwd.observed.iter().chain(&fwd.future).copied().collect();
                ensure(reversed == forward, || format!("{} does not reverse", fwd.id()))?;
                ensure(bwd.observed.len() == n_obs_bwd, || {
                    "wrong reversed observation length".into()
                })?;
                ensure(bwd.future.len() == window.n_obs_fwd + window.z_fwd - n_obs_bwd, || {
                    "reversed future length breaks N_obs + Z - reversed N_obs".into()
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!(
        "{checked} instances across 4 reversed splits; default (16, 12)"
    ))
}

fn criterion_5() -> Outcome {
    let vocab = Vocabulary::demo();
    let corpus = generate_corpus(
        &vocab,
        &ScenarioConfig {
            num_videos: 40,
            ..Default::default()
        },
    )
    .unwrap();
    let space = TokenSpace::new(&vocab, 96);
    let model = ModelConfig {
        vocab_size: space.size(),
        ..Default::default()
    };
    let random = init_params(&model).map_err(|e| e.to_string())?;
    let (trained, _) = train(
        &corpus.train,
        &space,
        &TrainConfig {
            epochs: 2,
            ..Default::default()
        },
        &model,
    )
    .map_err(|e| e.to_string())?;
    let window = WindowConfig::default();
    let instances: Vec<_> = corpus
        .test
        .iter()
        .flat_map(|v| make_forward_instances(v, &window))
        .collect();
    let (mut total, mut ok) = (0, 0);
    for (params, temperature) in [(&random, 1.0), (&random, 3.0), (&trained, 1.0), (&trained, 0.5)] {
        let gen = GenerationConfig {
            k: 5,
            temperature,
            strategy: Strategy::GreedyFirst,
            seed: 11,
        };
        for mode in [PreambleMode::SpecialToken, PreambleMode::DetailedDescription] {
            for inst in &instances {
                match generate_candidates(params, &space, &inst.observed, window.z_fwd, &gen, mode, &inst.id()) {
                    Ok(set) => {
                        for c in &set.candidates {
                            total += 1;
                            ok += usize::from(c.len() == window.z_fwd && c.iter().all(|a| vocab.contains(*a)));
                        }
                    }
                    Err(e) => return Err(format!("{}: {e}", inst.id())),
                }
            }
        }
    }
    ensure(total >= 1000, || format!("only {total} generations"))?;
    ensure(ok == total, || {
        format!("{} of {total} generations malformed", total - ok)
    })?;
    Ok(format!(
        "{ok}/{total} generations decode to exactly {} actions",
        window.z_fwd
    ))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let (_, corpus, space) = default_corpus();
    let seeds: Vec<u64> = (0..5).collect();
    let model = ModelConfig {
        vocab_size: space.size(),
        ..Default::default()
    };
    let run = |beta: f64, seed: u64| -> Result<f64, String> {
        let cfg = TrainConfig {
            weights: LossWeights { alpha: 1.0, beta },
            seed,
            ..Default::default()
        };
        let (params, _) =
            train(&corpus.train, &space, &cfg, &ModelConfig { seed, ..model }).map_err(|e| e.to_string())?;
        let gen = GenerationConfig {
            seed,
            ..Default::default()
        };
        let report = evaluate(
            &params,
            &space,
            &corpus.test,
            &cfg.window,
            &gen,
            &EdConfig::default(),
            cfg.preamble,
        )
        .map_err(|e| e.to_string())?;
        Ok(report.mean_ed_action)
    };
    let jobs: Vec<(f64, u64)> = [0.0, 1.0]
        .iter()
        .flat_map(|&b| seeds.iter().map(move |&s| (b, s)))
        .collect();
    let results: Vec<f64> = {
        use rayon::prelude::*;
        jobs.par_iter().map(|&(b, s)| run(b, s)).collect::<Result<_, _>>()?
    };
    let (fwd, bi) = results.split_at(seeds.len());
    for (i, seed) in seeds.iter().enumerate() {
        println!(
            "    seed {seed}: forward-only {:.4}  bidirectional {:.4}  delta {:+.4}",
            fwd[i],
            bi[i],
            bi[i] - fwd[i]
        );
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mf, mb) = (mean(fwd), mean(bi));
    ensure(mb <= mf + 0.01, || {
        format!("bidirectional {mb:.4} > forward-only {mf:.4} + 0.01")
    })?;
    within(start.elapsed(), 900.0)?;
    Ok(format!(
        "mean action ED bidirectional {mb:.4} vs forward-only {mf:.4} (delta {:+.4}) over {} seeds in {:.0}s",
        mb - mf,
        seeds.len(),
        start.elapsed().as_secs_f64()
    ))
}

const REDUCED: &str = r#"{
  "data": {"num_videos": 20},
  "model": {"embed_dim": 16, "mlp_hidden": 32},
  "train": {"epochs": 1},
  "generation": {"k": 2}
}"#;

fn biant(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_biant"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("biant {args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("reduced.json");
    fs::write(&cfg, REDUCED).map_err(|e| e.to_string())?;
    let out = dir.path().join("ablate");
    biant(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--grid",
        "all",
        "--seeds",
        "0,1",
    ])?;
    let expected: [(&str, &str, &[&str]); 3] = [
        ("obs_interval", "n_obs_bwd", &["4", "8", "16", "24"]),
        (
            "loss_weights",
            "loss_weights",
            &["alpha=1 beta=0.5", "alpha=1 beta=0.75", "alpha=1 beta=1"],
        ),
        ("token_type", "token_type", &["special", "description"]),
    ];
    for (grid, key, rows) in expected {
        let text = fs::read_to_string(out.join("ablation").join(format!("{grid}.csv"))).map_err(|e| e.to_string())?;
        let lines: Vec<&str> = text.lines().collect();
        let header = format!("{key},verb_mean,verb_std,noun_mean,noun_std,action_mean,action_std,seeds");
        ensure(lines.first() == Some(&header.as_str()), || {
            format!("{grid}: header {:?}", lines.first())
        })?;
        let labels: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
        ensure(labels == rows, || format!("{grid}: rows {labels:?}"))?;
        for l in &lines[1..] {
            let fields: Vec<&str> = l.split(',').collect();
            ensure(fields.len() == 8 && fields[7] == "2", || format!("{grid}: bad row {l}"))?;
            ensure(
                fields[1..7]
                    .iter()
                    .all(|f| f.parse::<f64>().is_ok_and(|v| (0.0..=1.0).contains(&v))),
                || format!("{grid}: non-numeric row {l}"),
            )?;
        }
    }
    Ok("obs_interval 4 rows, loss_weights 3 rows, token_type 2 rows; verb/noun/action mean+std columns".into())
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("reduced.json");
    fs::write(&cfg, REDUCED).map_err(|e| e.to_string())?;
    let cfg = cfg.to_str().unwrap();
    let runs = [dir.path().join("a"), dir.path().join("b")];
    for run in &runs {
        let out = run.to_str().unwrap();
        biant(&["gen-data", "--config", cfg, "--out", out, "--seed", "3"])?;
        biant(&["train", "--config", cfg, "--out", out, "--seed", "3"])?;
        biant(&["eval", "--config", cfg, "--out", out, "--seed", "3", "--candidates"])?;
    }
    let files = [
        "data/vocab.json",
        "data/train.json",
        "data/val.json",
        "data/test.json",
        "data/corpus_meta.json",
        "checkpoint.json",
        "eval_report.json",
        "eval_summary.csv",
        "candidates.jsonl",
    ];
    let read = |root: &Path, f: &str| fs::read(root.join(f)).map_err(|e| format!("{f}: {e}"));
    for f in files {
        ensure(read(&runs[0], f)? == read(&runs[1], f)?, || {
            format!("{f} differs between runs")
        })?;
    }
    Ok(format!(
        "{} primary outputs byte-identical across two gen-data/train/eval runs",
        files.len()
    ))
}

fn criterion_9() -> Outcome {
    let (_, corpus, space) = default_corpus();
    let window = WindowConfig::default();
    let inst = make_forward_instances(&corpus.test[0], &window).remove(0);
    let enc = encode_instance(&space, &inst, PreambleMode::SpecialToken).map_err(|e| e.to_string())?;
    let m = enc.num_targets() as f64;
    let v = space.size() as f64;
    // All-zero parameters give zero logits everywhere, hence uniform predictions.
    let zero = Parameters::zeros(ModelConfig {
        vocab_size: space.size(),
        ..Default::default()
    });
    let uniform =
        task_loss(&forward(&zero, &enc.tokens).map_err(|e| e.to_string())?, &enc).map_err(|e| e.to_string())?;
    let err = (uniform - m * v.ln()).abs();
    ensure(err < 1e-9, || {
        format!("uniform loss {uniform} vs M ln V {} (err {err:e})", m * v.ln())
    })?;
    let perfect: Vec<Vec<f64>> = (0..enc.tokens.len())
        .map(|j| {
            let mut d = vec![0.0; space.size()];
            d[enc.tokens[(j + 1).min(enc.tokens.len() - 1)]] = 1.0;
            d
        })
        .collect();
    let zero_loss = task_loss(&perfect, &enc).map_err(|e| e.to_string())?;
    ensure(zero_loss == 0.0, || format!("perfect-prediction loss {zero_loss}"))?;
    Ok(format!(
        "uniform {uniform:.12} = {m}·ln({v}) (err {err:.1e}); perfect 0"
    ))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("BIANT_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    type Criterion = (usize, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        (1, "edit distance matches reference DP", criterion_1),
        (2, "analytic gradient matches finite differences", criterion_2),
        (3, "loss linearity and forward-only trajectory", criterion_3),
        (4, "reversal invariants", criterion_4),
        (5, "grammar completeness", criterion_5),
        (6, "bidirectional no worse than forward-only", criterion_6),
        (7, "ablation table shapes", criterion_7),
        (8, "pipeline determinism", criterion_8),
        (9, "analytic loss values", criterion_9),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} PASS [{name}] {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL [{name}] {detail} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

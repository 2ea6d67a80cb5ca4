use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use biant_core::data::{generate_corpus, load_corpus, save_corpus, Corpus, META_FILE};
use biant_core::eval::{evaluate_detailed, run_ablation, AblationGrid, AblationSetup, EvalReport};
use biant_core::generate::write_candidates_jsonl;
use biant_core::model::{
    finite_difference_check, init_params, load_checkpoint, perturb, save_checkpoint, tiny_check_batch, LossWeights,
    ModelConfig,
};
use biant_core::prompt::TokenSpace;
use biant_core::train::{build_training_set, train as train_model, TrainingLog};
use biant_core::vocab::Vocabulary;
use biant_core::Error;

use crate::config::{Overrides, RunConfig};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "eval_report.json";
pub const SUMMARY_FILE: &str = "eval_summary.csv";
pub const CANDIDATES_FILE: &str = "candidates.jsonl";

struct Prepared {
    cfg: RunConfig,
    vocab: Vocabulary,
    space: TokenSpace,
}

fn prepare(o: &Overrides) -> anyhow::Result<Prepared> {
    let mut cfg = RunConfig::resolve(o)?;
    let vocab = cfg.load_vocab()?;
    let space = cfg.finalize(&vocab)?;
    Ok(Prepared { cfg, vocab, space })
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(BufWriter::new(f))
}

fn write_corpus(p: &Prepared) -> anyhow::Result<Corpus> {
    let corpus = generate_corpus(&p.vocab, &p.cfg.data)?;
    let dir = p.cfg.data_dir();
    save_corpus(&dir, &p.vocab, &corpus)?;
    let s = &corpus.meta.sanity;
    eprintln!(
        "wrote {} videos to {} (train {}, val {}, test {}); late-motif MI {:.4} nats, scene match {:.3}",
        corpus.len(),
        dir.display(),
        corpus.train.len(),
        corpus.val.len(),
        corpus.test.len(),
        s.early_late_mutual_information,
        s.late_scene_match_rate
    );
    Ok(corpus)
}

/// Loads the corpus from the data directory, generating it on first use.
fn ensure_corpus(p: &Prepared) -> anyhow::Result<Corpus> {
    let dir = p.cfg.data_dir();
    if !dir.join(META_FILE).exists() {
        return write_corpus(p);
    }
    let (vocab, corpus) = load_corpus(&dir)?;
    if vocab != p.vocab {
        bail!(Error::InvalidConfig(format!(
            "{} was built with a different vocabulary",
            dir.display()
        )));
    }
    if corpus.meta.config != p.cfg.data {
        bail!(Error::InvalidConfig(format!(
            "{} holds a corpus generated with a different data config; remove it or point data_dir elsewhere",
            dir.display()
        )));
    }
    Ok(corpus)
}

fn require_corpus(p: &Prepared) -> anyhow::Result<Corpus> {
    let (vocab, corpus) = load_corpus(p.cfg.data_dir())?;
    if vocab != p.vocab {
        bail!(Error::InvalidConfig(
            "corpus vocabulary differs from the configured one".into()
        ));
    }
    Ok(corpus)
}

pub fn gen_data(o: &Overrides) -> anyhow::Result<()> {
    let p = prepare(o)?;
    p.cfg.echo(&p.cfg.out_dir, CONFIG_FILE)?;
    write_corpus(&p)?;
    Ok(())
}

fn train_step(p: &Prepared, corpus: &Corpus) -> anyhow::Result<()> {
    let out = &p.cfg.out_dir;
    p.cfg.echo(out, CONFIG_FILE)?;
    let (params, log) = train_model(&corpus.train, &p.space, &p.cfg.train, &p.cfg.model)?;
    save_checkpoint(&params, out.join(CHECKPOINT_FILE))?;
    log.write_csv(create(&out.join(TRAIN_LOG_FILE))?)?;
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        eprintln!(
            "trained {} epochs in {:.1}s: mean loss {:.4} -> {:.4} (fwd {:.4}, bwd {:.4})",
            log.epochs.len(),
            last.wallclock_s,
            first.mean_loss,
            last.mean_loss,
            last.mean_loss_fwd,
            last.mean_loss_bwd
        );
    }
    Ok(())
}

pub fn train(o: &Overrides, dump_encoded: Option<usize>) -> anyhow::Result<()> {
    let p = prepare(o)?;
    let corpus = ensure_corpus(&p)?;
    if let Some(n) = dump_encoded {
        let set = build_training_set(&corpus.train, &p.cfg.train, &p.space)?;
        let stdout = std::io::stdout();
        let mut w = stdout.lock();
        for (i, enc) in set.iter().take(n).enumerate() {
            let names: Vec<String> = enc
                .tokens
                .iter()
                .zip(&enc.loss_mask)
                .map(|(&t, &m)| {
                    let name = p.space.token_name(t, Some(&p.vocab));
                    if m {
                        format!("{name}*")
                    } else {
                        name
                    }
                })
                .collect();
            writeln!(
                w,
                "#{i} {:?} len={} targets={}",
                enc.direction,
                enc.tokens.len(),
                enc.num_targets()
            )?;
            writeln!(w, "{}", names.join(" "))?;
        }
        return Ok(());
    }
    train_step(&p, &corpus)
}

fn eval_step(p: &Prepared, corpus: &Corpus, checkpoint: &Path, candidates: bool) -> anyhow::Result<EvalReport> {
    let out = &p.cfg.out_dir;
    let params = load_checkpoint(checkpoint)?;
    if params.config.vocab_size != p.space.size() {
        bail!(Error::InvalidConfig(format!(
            "checkpoint vocabulary of {} tokens does not match the token space ({})",
            params.config.vocab_size,
            p.space.size()
        )));
    }
    let (report, sets) = evaluate_detailed(
        &params,
        &p.space,
        &corpus.test,
        &p.cfg.train.window,
        &p.cfg.generation,
        &p.cfg.ed,
        p.cfg.train.preamble,
    )?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    report.save_json(out.join(REPORT_FILE))?;
    report.write_summary_csv(create(&out.join(SUMMARY_FILE))?)?;
    if candidates {
        let mut w = create(&out.join(CANDIDATES_FILE))?;
        write_candidates_jsonl(&mut w, &p.vocab, &sets)?;
        w.flush()?;
    }
    eprintln!(
        "{} test instances, K={}: ED verb {:.4}, noun {:.4}, action {:.4}",
        report.num_instances, p.cfg.generation.k, report.mean_ed_verb, report.mean_ed_noun, report.mean_ed_action
    );
    Ok(report)
}

pub fn eval(o: &Overrides, checkpoint: Option<&Path>, candidates: bool) -> anyhow::Result<()> {
    let p = prepare(o)?;
    let corpus = require_corpus(&p)?;
    let ckpt = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| p.cfg.out_dir.join(CHECKPOINT_FILE));
    eval_step(&p, &corpus, &ckpt, candidates)?;
    Ok(())
}

pub fn run(o: &Overrides, candidates: bool) -> anyhow::Result<()> {
    let p = prepare(o)?;
    let corpus = ensure_corpus(&p)?;
    train_step(&p, &corpus)?;
    eval_step(&p, &corpus, &p.cfg.out_dir.join(CHECKPOINT_FILE), candidates)?;
    Ok(())
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

pub fn ablate(o: &Overrides, grid: &str, seeds: Option<Vec<u64>>) -> anyhow::Result<()> {
    let p = prepare(o)?;
    let corpus = ensure_corpus(&p)?;
    let grids = if grid == "all" {
        AblationGrid::ALL.to_vec()
    } else {
        vec![AblationGrid::parse(grid)?]
    };
    let seeds = seeds.unwrap_or_else(|| p.cfg.ablation.seeds.clone());
    let root = p.cfg.out_dir.join("ablation");
    p.cfg.echo(&root, CONFIG_FILE)?;
    let setup = AblationSetup {
        train_videos: &corpus.train,
        test_videos: &corpus.test,
        space: &p.space,
        model: p.cfg.model,
        generation: p.cfg.generation,
        ed: p.cfg.ed,
    };
    for g in grids {
        eprintln!("ablation {} over seeds {seeds:?}", g.name());
        let (table, runs) = run_ablation(g, &p.cfg.train, &seeds, &setup)?;
        for r in &runs {
            let dir = root
                .join(g.name())
                .join(slug(&r.cell.label))
                .join(format!("seed-{}", r.seed));
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            r.report.save_json(dir.join(REPORT_FILE))?;
            r.log.write_csv(create(&dir.join(TRAIN_LOG_FILE))?)?;
        }
        table.write_csv(create(&root.join(format!("{}.csv", g.name())))?)?;
        let text = table.render_text();
        fs::write(root.join(format!("{}.txt", g.name())), &text)?;
        print!("{text}");
    }
    Ok(())
}

pub fn gradcheck(eps: f64, tol: f64, seed: u64) -> anyhow::Result<()> {
    if !(eps > 0.0 && tol > 0.0) {
        bail!(Error::InvalidConfig("eps and tol must be positive".into()));
    }
    let cfg = ModelConfig {
        seed,
        ..ModelConfig::tiny()
    };
    let mut params = init_params(&cfg)?;
    perturb(&mut params, 0.3, seed.wrapping_add(1));
    let batch = tiny_check_batch(cfg.vocab_size, 14, seed);
    let report = finite_difference_check(&params, &batch, LossWeights::new(1.0, 0.5)?, eps)?;
    for b in &report.blocks {
        println!(
            "{:<24} rel_err {:.3e}  |grad| {:.3e}",
            b.name, b.rel_err, b.analytic_norm
        );
    }
    let verdict = if report.passed(tol) { "PASS" } else { "FAIL" };
    println!(
        "{verdict}: max relative error {:.3e} (tol {tol:.0e}, eps {eps:.0e})",
        report.max_rel_err
    );
    if !report.passed(tol) {
        bail!("gradient check failed");
    }
    Ok(())
}

fn read_existing(path: PathBuf) -> Option<PathBuf> {
    path.exists().then_some(path)
}

pub fn report(out: &Path) -> anyhow::Result<()> {
    if !out.is_dir() {
        bail!(Error::Io {
            path: out.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "run directory not found"),
        });
    }
    let mut found = false;
    println!("run: {}", out.display());
    if let Some(path) = read_existing(out.join(TRAIN_LOG_FILE)) {
        let log = TrainingLog::read_csv(File::open(&path)?)?;
        if let (Some(first), Some(last)) = (log.first(), log.last()) {
            found = true;
            println!(
                "training: {} epochs, mean loss {:.4} -> {:.4}, fwd {:.4}, bwd {:.4}",
                log.epochs.len(),
                first.mean_loss,
                last.mean_loss,
                last.mean_loss_fwd,
                last.mean_loss_bwd
            );
        }
    }
    if let Some(path) = read_existing(out.join(REPORT_FILE)) {
        let r = EvalReport::load_json(&path)?;
        found = true;
        println!("evaluation: {} instances, K={}", r.num_instances, r.config.generation.k);
        println!("  {:<8} {:>8}", "axis", "ED");
        for (name, v) in [
            ("verb", r.mean_ed_verb),
            ("noun", r.mean_ed_noun),
            ("action", r.mean_ed_action),
        ] {
            println!("  {name:<8} {v:>8.4}");
        }
    }
    let ablation = out.join("ablation");
    for g in AblationGrid::ALL {
        if let Some(path) = read_existing(ablation.join(format!("{}.txt", g.name()))) {
            found = true;
            println!();
            print!("{}", fs::read_to_string(path)?);
        }
    }
    if !found {
        bail!(Error::Io {
            path: out.to_path_buf(),
            source: std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no training log, report or ablation tables"
            ),
        });
    }
    Ok(())
}

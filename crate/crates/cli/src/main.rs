mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use biant_core::Error;
use clap::{Parser, Subcommand};

use crate::config::Overrides;

#[derive(Parser)]
#[command(
    name = "biant",
    version,
    about = "Bidirectional action-sequence learning for long-term action anticipation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic scenario corpus into the data directory
    GenData {
        #[command(flatten)]
        o: Overrides,
    },
    /// Train a model; generates the corpus first if it is missing
    Train {
        #[command(flatten)]
        o: Overrides,
        /// Print the first N encoded training instances and exit
        #[arg(long, value_name = "N")]
        dump_encoded: Option<usize>,
    },
    /// Evaluate the run's checkpoint on the test split
    Eval {
        #[command(flatten)]
        o: Overrides,
        /// Checkpoint to evaluate instead of <out>/checkpoint.json
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Also write every candidate to <out>/candidates.jsonl
        #[arg(long)]
        candidates: bool,
    },
    /// gen-data, train and eval in one go
    Run {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        candidates: bool,
    },
    /// Sweep one ablation grid over several seeds
    Ablate {
        #[command(flatten)]
        o: Overrides,
        /// Grid to sweep
        #[arg(long, value_parser = ["obs_interval", "loss_weights", "token_type", "all"])]
        grid: String,
        /// Comma-separated seeds, overriding ablation.seeds
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        seeds: Option<Vec<u64>>,
    },
    /// Finite-difference gradient check on the tiny model
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Seed of the perturbed parameters and batch
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize the artifacts found in a run directory
    Report {
        /// Run directory
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } => 2,
                Error::NumericalDivergence { .. } => 4,
                Error::InvalidConfig(_)
                | Error::InvalidBackwardSplit { .. }
                | Error::ContextOverflow { .. }
                | Error::InsufficientVocabulary { .. } => 3,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("BIANT_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("BIANT_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::InvalidConfig("BIANT_THREADS must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::GenData { o } => commands::gen_data(&o),
        Command::Train { o, dump_encoded } => commands::train(&o, dump_encoded),
        Command::Eval {
            o,
            checkpoint,
            candidates,
        } => commands::eval(&o, checkpoint.as_deref(), candidates),
        Command::Run { o, candidates } => commands::run(&o, candidates),
        Command::Ablate { o, grid, seeds } => commands::ablate(&o, &grid, seeds),
        Command::Gradcheck { eps, tol, seed } => commands::gradcheck(eps, tol, seed),
        Command::Report { out } => commands::report(&out),
    }
}

/// The top-level message plus any cause it does not already spell out.
fn render(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    for cause in err.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg = format!("{msg}: {c}");
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Bad flags are a configuration error, not a missing file.
            return if e.use_stderr() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

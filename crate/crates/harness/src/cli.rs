//! Command-line interface. Exit codes: 0 success, 1 other failure, 2 config
//! error, 3 numeric abort, 4 corrupt checkpoint.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use dagcomm_core::envs::EnvKind;
use dagcomm_core::metrics::MetricsRecord;

use crate::ablate::{ablate, Study};
use crate::config::{template, RunConfig, DEFAULT_EVAL_SEED};
use crate::error::HarnessError;
use crate::run::{eval_checkpoint, eval_json, trace_checkpoint, train_run, EVAL_FILE};

/// Environment variable capping rollout parallelism.
pub const THREADS_VAR: &str = "DAGCOMM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dagcomm", version, about = "Train and evaluate agents that communicate over DAGs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Suppress per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Greedy evaluation of a checkpoint; prints the metrics as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = DEFAULT_EVAL_SEED)]
        seed: u64,
        /// Where to write the JSON; defaults to eval.json beside the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every variant of a study for several seeds and compare them.
    Ablate {
        #[arg(long, value_enum)]
        study: Study,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Dump per-step traces and the transmission ledger of greedy episodes.
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = DEFAULT_EVAL_SEED)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Print a configuration template with every key and its default.
    Template {
        #[arg(long, default_value = "tj")]
        env: EnvKind,
    },
}

fn progress_line(prefix: &str, r: &MetricsRecord) {
    eprintln!(
        "{prefix}epoch {:>5}  success {:.3}  steps {:6.2}  comm {:8.2}  iei {:.4}  sei {:.4}  loss {:.4}",
        r.epoch, r.success_rate, r.avg_steps, r.c_comm, r.iei, r.sei, r.loss
    );
}

/// Builds the global rayon pool from `DAGCOMM_THREADS` when set.
pub fn configure_threads() -> Result<(), HarnessError> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| HarnessError::Config(format!("{THREADS_VAR} must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| HarnessError::Other(format!("thread pool: {e}")))
}

pub fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            quiet,
        } => {
            let mut run = RunConfig::load(&config)?.resolve()?;
            if let Some(s) = seed {
                run.train.seed = s;
            }
            if let Some(o) = out {
                run.out_dir = o;
            }
            let dir = run.out_dir.clone();
            let s = train_run(&run, &dir, |r| {
                if !quiet {
                    progress_line("", r)
                }
            })?;
            print!("{}", eval_json(&s.manifest.final_eval));
            Ok(())
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
            out,
        } => {
            let record = eval_checkpoint(&checkpoint, episodes, seed)?;
            let json = eval_json(&record);
            let path = out.unwrap_or_else(|| checkpoint.with_file_name(EVAL_FILE));
            std::fs::write(path, &json)?;
            print!("{json}");
            Ok(())
        }
        Command::Ablate {
            study,
            config,
            seeds,
            out,
            quiet,
        } => {
            let base = RunConfig::load(&config)?.resolve()?;
            let dir = out.unwrap_or_else(|| base.out_dir.clone());
            let (_, comparison) = ablate(study, &base, &seeds, &dir, |variant, seed, r| {
                if !quiet {
                    progress_line(&format!("[{variant} seed {seed}] "), r)
                }
            })?;
            let mut w = csv::Writer::from_writer(std::io::stdout());
            for row in &comparison {
                w.serialize(row)?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Trace {
            checkpoint,
            episodes,
            seed,
            out,
        } => {
            let f = trace_checkpoint(&checkpoint, episodes, seed, &out)?;
            println!(
                "{} steps -> {}, {} transmissions -> {}",
                f.steps,
                f.trace.display(),
                f.transmissions,
                f.ledger.display()
            );
            Ok(())
        }
        Command::Template { env } => {
            print!("{}", template(env));
            Ok(())
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| execute(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dagcomm: {e}");
            e.exit_code()
        }
    }
}

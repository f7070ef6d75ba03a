//! Single runs: train, evaluate, trace.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use dagcomm_core::comms::{CommGraph, CommLedger};
use dagcomm_core::metrics::MetricsRecord;
use dagcomm_core::topology::TopoLearnerParams;
use dagcomm_core::training::{evaluate, load_checkpoint, save_checkpoint, train_with, Checkpoint, EpochReport};
use serde::Serialize;

use crate::config::ResolvedRun;
use crate::error::HarnessError;
use crate::manifest::Manifest;
use crate::output::{write_text, MetricsWriter};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const EVAL_FILE: &str = "eval.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const LEDGER_FILE: &str = "ledger.csv";

/// Result of [`train_run`].
pub struct RunSummary {
    pub manifest: Manifest,
    pub curve: Vec<MetricsRecord>,
    pub learner: Option<TopoLearnerParams>,
}

fn write_checkpoint(path: &Path, run: &ResolvedRun, r: &EpochReport<'_>) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    save_checkpoint(&mut w, &run.train, r.policy, r.learner, &r.eval_graph)?;
    w.flush()?;
    Ok(())
}

/// Trains `run` into `out`: `metrics.csv` (one row per epoch, flushed as it
/// goes), periodic and final checkpoints, the final greedy evaluation and
/// `manifest.json`. `progress` receives each epoch's record.
pub fn train_run<F>(run: &ResolvedRun, out: &Path, mut progress: F) -> Result<RunSummary, HarnessError>
where
    F: FnMut(&MetricsRecord),
{
    std::fs::create_dir_all(out)?;
    let mut metrics = MetricsWriter::create(&out.join(METRICS_FILE))?;
    let every = run.train.checkpoint_every;
    let outcome = train_with(&run.train, |r| {
        progress(r.record);
        let mut step = || -> Result<(), HarnessError> {
            metrics.push(r.record)?;
            if every > 0 && r.record.epoch % every == 0 {
                let dir = out.join("checkpoints");
                std::fs::create_dir_all(&dir)?;
                write_checkpoint(&dir.join(format!("epoch-{:05}.bin", r.record.epoch)), run, r)?;
            }
            Ok(())
        };
        step().map_err(|e| match e {
            HarnessError::Io(e) => dagcomm_core::Error::Io(e),
            other => dagcomm_core::Error::Format(other.to_string()),
        })
    })?;
    let last = outcome.curve.last().cloned().unwrap_or_default();
    let final_report = EpochReport {
        record: &last,
        policy: &outcome.policy,
        learner: outcome.learner.as_ref(),
        eval_graph: outcome.eval_graph.clone(),
    };
    write_checkpoint(&out.join(CHECKPOINT_FILE), run, &final_report)?;
    let (final_eval, _) = evaluate(
        &outcome.policy,
        &outcome.eval_graph,
        &run.train.env,
        run.train.eval_episodes,
        run.eval_seed,
    )?;
    write_text(&out.join(EVAL_FILE), &eval_json(&final_eval))?;
    let manifest = Manifest::new(run, &outcome.curve, outcome.eval_graph.clone(), final_eval);
    write_text(&out.join(MANIFEST_FILE), &manifest.to_json())?;
    Ok(RunSummary {
        manifest,
        curve: outcome.curve,
        learner: outcome.learner,
    })
}

pub fn eval_json(record: &MetricsRecord) -> String {
    serde_json::to_string_pretty(record).expect("records always serialize") + "\n"
}

pub fn read_checkpoint_file(path: &Path) -> Result<Checkpoint, HarnessError> {
    let f = File::open(path).map_err(|e| HarnessError::Checkpoint(format!("{}: {e}", path.display())))?;
    load_checkpoint(BufReader::new(f)).map_err(|e| HarnessError::Checkpoint(format!("{}: {e}", path.display())))
}

/// Greedy evaluation of a checkpoint on its stored graph.
pub fn eval_checkpoint(path: &Path, episodes: usize, seed: u64) -> Result<MetricsRecord, HarnessError> {
    let ck = read_checkpoint_file(path)?;
    if episodes == 0 {
        return Err(HarnessError::Config("--episodes must be positive".into()));
    }
    Ok(evaluate(&ck.policy, &ck.graph, &ck.config.env, episodes, seed)?.0)
}

#[derive(Serialize)]
struct TraceLine<'a> {
    episode: usize,
    step: usize,
    #[serde(flatten)]
    record: &'a dagcomm_core::training::StepRecord,
}

/// Files written by [`trace_checkpoint`].
pub struct TraceFiles {
    pub trace: PathBuf,
    pub ledger: PathBuf,
    pub steps: usize,
    pub transmissions: usize,
}

/// Greedy episodes of a checkpoint dumped as JSON lines (one per step) and a
/// ledger CSV (one row per transmission).
pub fn trace_checkpoint(path: &Path, episodes: usize, seed: u64, out: &Path) -> Result<TraceFiles, HarnessError> {
    let ck = read_checkpoint_file(path)?;
    std::fs::create_dir_all(out)?;
    let traces = if episodes == 0 {
        Vec::new()
    } else {
        evaluate(&ck.policy, &ck.graph, &ck.config.env, episodes, seed)?.1
    };
    let files = TraceFiles {
        trace: out.join(TRACE_FILE),
        ledger: out.join(LEDGER_FILE),
        steps: traces.iter().map(|t| t.length).sum(),
        transmissions: traces.iter().map(|t| t.ledger.total()).sum(),
    };
    let mut w = BufWriter::new(File::create(&files.trace)?);
    let mut ledger = CommLedger::new();
    for (episode, t) in traces.iter().enumerate() {
        for (step, record) in t.steps.iter().enumerate() {
            serde_json::to_writer(&mut w, &TraceLine { episode, step, record })?;
            w.write_all(b"\n")?;
        }
        ledger.extend(&t.ledger);
    }
    w.flush()?;
    let mut w = BufWriter::new(File::create(&files.ledger)?);
    ledger.write_csv(&mut w)?;
    w.flush()?;
    Ok(files)
}

/// Number of transmissions `graph` makes per step.
pub fn edges_of(graph: &CommGraph) -> Option<usize> {
    graph.as_dag().map(|d| d.edge_count())
}

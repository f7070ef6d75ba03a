//! Multi-variant, multi-seed studies with a combined comparison table.

use std::path::Path;

use dagcomm_core::comms::CommGraph;
use dagcomm_core::metrics::MetricsRecord;
use dagcomm_core::training::TopologyMode;

use crate::config::ResolvedRun;
use crate::error::HarnessError;
use crate::output::{compare, write_rows, ComparisonRow, RunRow};
use crate::run::{edges_of, train_run};

pub const RUNS_FILE: &str = "runs.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";

/// Regularizer weight used by the loss study when the base config has none.
pub const DEFAULT_LAMBDA: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Study {
    /// Layered fully-connected graphs of depth 1, 2 and 4.
    Depth,
    /// Learned topology against its label-shuffled copy.
    Order,
    /// Regularizers off against on.
    Loss,
}

fn with_seed(base: &ResolvedRun, seed: u64) -> ResolvedRun {
    let mut run = base.clone();
    run.train.seed = seed;
    run.train.topology_seed = seed;
    run
}

fn row(variant: &str, seed: u64, eval: &MetricsRecord, graph: &CommGraph, convergence: Option<usize>) -> RunRow {
    RunRow {
        variant: variant.to_string(),
        seed,
        success_rate: eval.success_rate,
        avg_steps: eval.avg_steps,
        c_comm: eval.c_comm,
        iei: eval.iei,
        sei: eval.sei,
        convergence_epoch: convergence,
        edges: edges_of(graph),
    }
}

/// Runs every variant of `study` for every seed under `out/<variant>/seed-<s>`,
/// then writes `runs.csv` (one row per run) and `comparison.csv` (per-variant
/// medians of the final evaluations).
pub fn ablate<F>(
    study: Study,
    base: &ResolvedRun,
    seeds: &[u64],
    out: &Path,
    mut progress: F,
) -> Result<(Vec<RunRow>, Vec<ComparisonRow>), HarnessError>
where
    F: FnMut(&str, u64, &MetricsRecord),
{
    if seeds.is_empty() {
        return Err(HarnessError::Config("at least one seed is required".into()));
    }
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    let mut go = |variant: &str, run: &ResolvedRun, seed: u64| -> Result<CommGraph, HarnessError> {
        run.train.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let dir = out.join(variant).join(format!("seed-{seed}"));
        let s = train_run(run, &dir, |r| progress(variant, seed, r))?;
        let m = &s.manifest;
        rows.push(row(variant, seed, &m.final_eval, &m.eval_graph, m.convergence.epoch));
        Ok(m.eval_graph.clone())
    };
    for &seed in seeds {
        let run = with_seed(base, seed);
        match study {
            Study::Depth => {
                for mode in [TopologyMode::FcD1, TopologyMode::FcD2, TopologyMode::FcD4] {
                    let mut r = run.clone();
                    r.train.topology = mode;
                    go(mode.name(), &r, seed)?;
                }
            }
            Study::Order => {
                let mut learned = run.clone();
                learned.train.topology = TopologyMode::Learned;
                let graph = go("learned", &learned, seed)?;
                let dag = graph.as_dag().expect("learned mode evaluates on a DAG");
                let mut shuffled = run.clone();
                shuffled.train.topology = TopologyMode::Shuffled;
                shuffled.train.base_dag = Some(dag.to_json());
                go("shuffled", &shuffled, seed)?;
            }
            Study::Loss => {
                let (li, ls) = match (run.train.lambda_iei, run.train.lambda_sei) {
                    (0.0, 0.0) => (DEFAULT_LAMBDA, DEFAULT_LAMBDA),
                    other => other,
                };
                let mut off = run.clone();
                off.train.lambda_iei = 0.0;
                off.train.lambda_sei = 0.0;
                go("lambda-off", &off, seed)?;
                let mut on = run;
                on.train.lambda_iei = li;
                on.train.lambda_sei = ls;
                go("lambda-on", &on, seed)?;
            }
        }
    }
    let comparison = compare(&rows);
    write_rows(&out.join(RUNS_FILE), &rows)?;
    write_rows(&out.join(COMPARISON_FILE), &comparison)?;
    Ok((rows, comparison))
}

use dagcomm_core::comms::CommGraph;
use dagcomm_core::metrics::MetricsRecord;
use dagcomm_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ResolvedRun, RunConfig};
use crate::error::HarnessError;

/// Trailing window and fraction used for the reported convergence epoch.
pub const CONVERGENCE_WINDOW: usize = 20;
pub const CONVERGENCE_THETA: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub metric: String,
    pub window: usize,
    pub theta: f64,
    pub epoch: Option<usize>,
}

/// Everything needed to reproduce a run, plus its headline results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub run_id: String,
    pub version: String,
    /// Fully explicit; `dagcomm train --config manifest.json` replays the run.
    pub config: RunConfig,
    pub resolved: TrainConfig,
    pub epochs_completed: usize,
    pub eval_graph: CommGraph,
    pub final_eval: MetricsRecord,
    pub convergence: Convergence,
}

/// Short content hash of the resolved run; equal configs share an id.
pub fn run_id(run: &ResolvedRun) -> String {
    let json = serde_json::to_string(&(&run.train, run.eval_seed)).expect("configs always serialize");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(run: &ResolvedRun, curve: &[MetricsRecord], eval_graph: CommGraph, final_eval: MetricsRecord) -> Self {
        let success: Vec<f64> = curve.iter().map(|r| r.success_rate).collect();
        Manifest {
            run_id: run_id(run),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: RunConfig::from_resolved(run),
            resolved: run.train.clone(),
            epochs_completed: curve.len(),
            eval_graph,
            final_eval,
            convergence: Convergence {
                metric: "success_rate".into(),
                window: CONVERGENCE_WINDOW,
                theta: CONVERGENCE_THETA,
                epoch: dagcomm_core::metrics::convergence_epoch(&success, CONVERGENCE_WINDOW, CONVERGENCE_THETA),
            },
        }
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("manifest: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifests always serialize")
    }
}

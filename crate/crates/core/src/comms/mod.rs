//! Inter-agent messaging: payload encoding, aggregation, round-ordered
//! propagation over a communication graph, and the transmission ledger.

mod ledger;
mod propagate;

use serde::{Deserialize, Serialize};

pub use ledger::{count_comm, CommLedger, LedgerRecord, LEDGER_CSV_HEADER};
pub use propagate::{propagate, propagate_backward, AgentLinks, CommGraph, LinkGrads, StepComm};

use crate::error::{contract, dimension, Result};
use crate::numkit::Mlp;

pub const DEFAULT_MESSAGE_WIDTH: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender: usize,
    pub round: usize,
    pub payload: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
}

/// Runs the message head on a hidden state.
pub fn encode_message(hidden: &[f64], head: &Mlp) -> Result<Vec<f64>> {
    if hidden.len() != head.input_width() {
        return Err(dimension(format!(
            "message head expects hidden width {}, got {}",
            head.input_width(),
            hidden.len()
        )));
    }
    Ok(head.forward(hidden)?.0)
}

/// Combines incoming payloads; an empty set yields the zero vector of `width`.
pub fn aggregate<P: AsRef<[f64]>>(incoming: &[P], mode: Aggregation, width: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; width];
    if let Some(bad) = incoming.iter().find(|p| p.as_ref().len() != width) {
        return Err(contract(format!(
            "payload width {} differs from {width}",
            bad.as_ref().len()
        )));
    }
    match mode {
        Aggregation::Mean => {
            if incoming.is_empty() {
                return Ok(out);
            }
            for p in incoming {
                crate::numkit::axpy(1.0, p.as_ref(), &mut out);
            }
            let k = incoming.len() as f64;
            out.iter_mut().for_each(|v| *v /= k);
        }
    }
    Ok(out)
}

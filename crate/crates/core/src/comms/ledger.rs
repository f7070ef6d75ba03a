use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

pub const LEDGER_CSV_HEADER: &str = "episode,step,round,sender,receiver";

/// One point-to-point transmission. `round` is the receiver's round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub episode: usize,
    pub step: usize,
    pub round: usize,
    pub sender: usize,
    pub receiver: usize,
}

/// Every transmission over a set of episodes. A broadcast to `n` receivers
/// is `n` records.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommLedger {
    records: Vec<LedgerRecord>,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: LedgerRecord) {
        self.records.push(record);
    }

    pub fn extend(&mut self, other: &CommLedger) {
        self.records.extend_from_slice(&other.records);
    }

    pub fn records(&self) -> &[LedgerRecord] {
        &self.records
    }

    pub fn total(&self) -> usize {
        self.records.len()
    }

    /// Re-stamps every record with `episode`.
    pub fn set_episode(&mut self, episode: usize) {
        self.records.iter_mut().for_each(|r| r.episode = episode);
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{LEDGER_CSV_HEADER}")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{},{}", r.episode, r.step, r.round, r.sender, r.receiver)?;
        }
        Ok(())
    }
}

/// Average transmissions per episode.
pub fn count_comm(ledger: &CommLedger, n_episodes: usize) -> Result<f64> {
    if n_episodes == 0 {
        return Err(contract("communication count over zero episodes"));
    }
    Ok(ledger.total() as f64 / n_episodes as f64)
}

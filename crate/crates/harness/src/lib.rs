//! Configuration, experiment orchestration and result emission for the
//! `dagcomm` command-line tool.

pub mod ablate;
pub mod cli;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;
pub mod run;

pub use error::HarnessError;

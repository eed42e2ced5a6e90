//! Experiment harness: TOML configs, replicated runs persisted as JSON Lines
//! traces, reachability aggregation, and CSV/SVG reports.
//!
//! The `beacon` binary wraps these in a CLI; see [`config`] for the config
//! schema.

pub mod aggregate;
pub mod config;
mod error;
pub mod report;
pub mod runner;
pub mod trace;

pub use aggregate::{aggregate, AggregateReport, Curve};
pub use config::{Experiment, ExperimentConfig};
pub use error::{Error, Result};
pub use report::write_report;
pub use runner::{run_experiment, RunSummary};
pub use trace::{load_traces, TraceFile};

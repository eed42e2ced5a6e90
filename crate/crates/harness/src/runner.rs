//! Replicated execution with per-replicate persistence.

use std::fs;
use std::path::Path;
use std::time::Instant;

use beacon_core::algorithms::{run_replicate, RunConfig};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::Experiment;
use crate::error::{Error, Result};
use crate::trace::{self, FailureRecord, TraceMeta, WallTime};

/// Outcome of one replicate slot.
#[derive(Clone, Debug, PartialEq)]
pub enum ReplicateStatus {
    Completed,
    /// A trace with the same config hash was already on disk.
    Skipped,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateOutcome {
    pub algorithm: String,
    pub replicate: usize,
    pub status: ReplicateStatus,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    /// In (algorithm, replicate) order.
    pub outcomes: Vec<ReplicateOutcome>,
}

impl RunSummary {
    pub fn count(&self, pred: impl Fn(&ReplicateStatus) -> bool) -> usize {
        self.outcomes.iter().filter(|o| pred(&o.status)).count()
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReplicateOutcome> {
        self.outcomes.iter().filter(|o| matches!(o.status, ReplicateStatus::Failed(_)))
    }

    pub fn all_ok(&self) -> bool {
        self.failures().next().is_none()
    }
}

/// Header for replicate `replicate` of algorithm number `index`.
pub fn trace_meta(exp: &Experiment, index: usize, replicate: usize) -> TraceMeta {
    let c = &exp.config;
    TraceMeta {
        format: trace::TRACE_FORMAT,
        config_hash: exp.hash.clone(),
        problem: exp.problem.name().to_string(),
        algorithm: c.algorithms[index].name().to_string(),
        algorithm_index: index,
        replicate,
        seed: c.base_seed + replicate as u64,
        n_init: c.n_init,
        iterations: c.iterations,
        bins_per_dim: exp.space.bins_per_dim().to_vec(),
        num_bins: exp.space.num_bins(),
        range: exp.range.clone(),
        noise_std: exp.problem.noise_std().to_vec(),
    }
}

/// Runs every missing replicate of `exp` into `exp.config.output` on `jobs`
/// worker threads (default: available parallelism).
///
/// Existing traces with the same config hash are kept; a trace with a
/// different hash aborts the run before anything executes. Replicate errors
/// are written to `.error.json` files and reported in the summary without
/// stopping the others.
pub fn run_experiment(exp: &Experiment, jobs: Option<usize>) -> Result<RunSummary> {
    let dir = exp.config.output.as_path();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let text = exp.config.to_toml()?;
    trace::write_atomic(&dir.join("config.toml"), |w| std::io::Write::write_all(w, text.as_bytes()))?;

    let mut pending = Vec::new();
    let mut outcomes = Vec::new();
    for (index, alg) in exp.config.algorithms.iter().enumerate() {
        for replicate in 0..exp.config.replicates {
            let path = trace::trace_path(dir, alg.name(), replicate);
            if path.exists() {
                let meta = trace::read_meta(&path)?;
                if meta.config_hash != exp.hash {
                    return Err(Error::Mixed(format!(
                        "{} was produced by a different config (hash {}); use a fresh output directory",
                        path.display(),
                        meta.config_hash
                    )));
                }
                outcomes.push(ReplicateOutcome {
                    algorithm: alg.name().to_string(),
                    replicate,
                    status: ReplicateStatus::Skipped,
                });
            } else {
                pending.push((index, replicate));
            }
        }
    }
    info!("{} replicates to run, {} already on disk", pending.len(), outcomes.len());

    let work = || -> Vec<Result<ReplicateOutcome>> { pending.par_iter().map(|&(i, r)| run_one(exp, dir, i, r)).collect() };
    let results = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config(format!("--jobs: {e}")))?
            .install(work),
        None => work(),
    };
    for r in results {
        outcomes.push(r?);
    }
    let order = |o: &ReplicateOutcome| {
        let idx = exp.config.algorithms.iter().position(|a| a.name() == o.algorithm);
        (idx, o.replicate)
    };
    outcomes.sort_by_key(order);
    Ok(RunSummary { outcomes })
}

fn run_one(exp: &Experiment, dir: &Path, index: usize, replicate: usize) -> Result<ReplicateOutcome> {
    let alg = &exp.config.algorithms[index];
    let meta = trace_meta(exp, index, replicate);
    let run = RunConfig {
        iterations: exp.config.iterations,
        n_init: exp.config.n_init,
        seed: meta.seed,
    };
    let start = Instant::now();
    let result = run_replicate(alg, &exp.problem, &exp.space, &run);
    let wall_seconds = start.elapsed().as_secs_f64();
    let failure = trace::failure_path(dir, alg.name(), replicate);
    let status = match result {
        Ok(t) => {
            trace::write_trace(&trace::trace_path(dir, alg.name(), replicate), &meta, &t.rows)?;
            trace::write_json(&trace::time_path(dir, alg.name(), replicate), &WallTime { wall_seconds })?;
            if failure.exists() {
                fs::remove_file(&failure).map_err(|e| Error::io(&failure, e))?;
            }
            info!("{} replicate {replicate} done in {wall_seconds:.1}s", alg.name());
            ReplicateStatus::Completed
        }
        Err(f) => {
            let message = f.error.to_string();
            warn!("{} replicate {replicate} failed: {message}", alg.name());
            trace::write_json(
                &failure,
                &FailureRecord {
                    meta,
                    error: message.clone(),
                    rows: f.partial.rows,
                },
            )?;
            ReplicateStatus::Failed(message)
        }
    };
    Ok(ReplicateOutcome {
        algorithm: alg.name().to_string(),
        replicate,
        status,
    })
}

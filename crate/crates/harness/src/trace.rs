//! Persisted replicate traces.
//!
//! One JSON Lines file per replicate: a [`TraceMeta`] header line followed
//! by one [`TraceRow`] per query. Files are written to a temporary name and
//! renamed, so a trace on disk is always complete. Wall-clock time lives in
//! a `.time.json` sidecar to keep trace bytes reproducible.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use beacon_core::algorithms::{RunTrace, TraceRow};
use beacon_core::problems::RangeSpec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_FORMAT: u32 = 1;
pub const TRACE_EXT: &str = "jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceMeta {
    pub format: u32,
    pub config_hash: String,
    pub problem: String,
    pub algorithm: String,
    /// Position of the algorithm in the config, for report ordering.
    pub algorithm_index: usize,
    pub replicate: usize,
    pub seed: u64,
    pub n_init: usize,
    pub iterations: usize,
    pub bins_per_dim: Vec<usize>,
    pub num_bins: usize,
    pub range: RangeSpec,
    pub noise_std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceFile {
    pub meta: TraceMeta,
    pub rows: Vec<TraceRow>,
}

impl TraceFile {
    pub fn final_reachability(&self) -> Option<f64> {
        self.rows.last().map(|r| r.reachability)
    }

    pub fn to_run_trace(&self) -> RunTrace {
        RunTrace {
            algorithm: self.meta.algorithm.clone(),
            seed: self.meta.seed,
            n_init: self.meta.n_init,
            iterations: self.meta.iterations,
            rows: self.rows.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallTime {
    pub wall_seconds: f64,
}

/// A replicate that errored, with its partial rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub meta: TraceMeta,
    pub error: String,
    pub rows: Vec<TraceRow>,
}

/// File stem of replicate `replicate` of `algorithm`.
pub fn stem(algorithm: &str, replicate: usize) -> String {
    format!("{algorithm}-{replicate:03}")
}

pub fn trace_path(dir: &Path, algorithm: &str, replicate: usize) -> PathBuf {
    dir.join(format!("{}.{TRACE_EXT}", stem(algorithm, replicate)))
}

pub fn time_path(dir: &Path, algorithm: &str, replicate: usize) -> PathBuf {
    dir.join(format!("{}.time.json", stem(algorithm, replicate)))
}

pub fn failure_path(dir: &Path, algorithm: &str, replicate: usize) -> PathBuf {
    dir.join(format!("{}.error.json", stem(algorithm, replicate)))
}

/// Fills `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    write(&mut w)
        .and_then(|_| w.flush())
        .and_then(|_| w.get_ref().sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_trace(path: &Path, meta: &TraceMeta, rows: &[TraceRow]) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer(&mut *w, meta)?;
        w.write_all(b"\n")?;
        for row in rows {
            serde_json::to_writer(&mut *w, row)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

/// Reads only the header line.
pub fn read_meta(path: &Path) -> Result<TraceMeta> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    BufReader::new(file).read_line(&mut line).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&line).map_err(|e| malformed(path, format!("header: {e}")))
}

/// Reads a trace and checks that it is complete and internally consistent.
pub fn read_trace(path: &Path) -> Result<TraceFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| malformed(path, "empty file"))?
        .map_err(|e| Error::io(path, e))?;
    let meta: TraceMeta = serde_json::from_str(&header).map_err(|e| malformed(path, format!("header: {e}")))?;
    if meta.format != TRACE_FORMAT {
        return Err(malformed(path, format!("format {} (expected {TRACE_FORMAT})", meta.format)));
    }
    let mut rows = Vec::with_capacity(meta.n_init + meta.iterations);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let row: TraceRow = serde_json::from_str(&line).map_err(|e| malformed(path, format!("row {i}: {e}")))?;
        rows.push(row);
    }
    let trace = TraceFile { meta, rows };
    if trace.rows.len() != trace.meta.n_init + trace.meta.iterations {
        return Err(malformed(
            path,
            format!("{} rows, expected {}", trace.rows.len(), trace.meta.n_init + trace.meta.iterations),
        ));
    }
    verify_metrics(&trace.rows, trace.meta.num_bins).map_err(|m| malformed(path, m))?;
    Ok(trace)
}

/// Checks that rows are dense in iteration and that the distinct-bin and
/// reachability columns follow from the bin column.
pub fn verify_metrics(rows: &[TraceRow], num_bins: usize) -> std::result::Result<(), String> {
    let mut seen = HashSet::new();
    let mut prev_reach = 0.0;
    for (i, r) in rows.iter().enumerate() {
        if r.iteration != i {
            return Err(format!("row {i} has iteration {}", r.iteration));
        }
        if r.bin >= num_bins {
            return Err(format!("row {i}: bin {} outside {num_bins} bins", r.bin));
        }
        seen.insert(r.bin);
        if r.distinct_bins != seen.len() {
            return Err(format!("row {i}: distinct_bins {} but {} bins seen", r.distinct_bins, seen.len()));
        }
        let reach = seen.len() as f64 / num_bins as f64;
        if r.reachability != reach {
            return Err(format!("row {i}: reachability {} but bins give {reach}", r.reachability));
        }
        if !(0.0..=1.0).contains(&r.reachability) || r.reachability < prev_reach {
            return Err(format!("row {i}: reachability {} breaks monotonicity or bounds", r.reachability));
        }
        prev_reach = r.reachability;
    }
    Ok(())
}

/// Every complete trace in `dir`, sorted by file name.
pub fn load_traces(dir: &Path) -> Result<Vec<TraceFile>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let hidden = path.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'));
        if !hidden && path.extension().is_some_and(|e| e == TRACE_EXT) {
            paths.push(path);
        }
    }
    paths.sort();
    paths.iter().map(|p| read_trace(p)).collect()
}

fn malformed(path: &Path, message: impl Into<String>) -> Error {
    Error::Trace {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

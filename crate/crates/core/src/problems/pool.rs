//! Finite candidate pools and their CSV format.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// A finite set of candidates with hidden outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolProblem {
    name: String,
    candidates: Vec<Vec<f64>>,
    outcomes: Vec<Vec<f64>>,
    noise_std: Vec<f64>,
}

impl PoolProblem {
    /// Validates finiteness and shapes, and drops exact duplicate candidate
    /// rows (first occurrence kept) with a warning.
    pub fn new(name: impl Into<String>, candidates: Vec<Vec<f64>>, outcomes: Vec<Vec<f64>>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::invalid("pool has no candidates"));
        }
        if candidates.len() != outcomes.len() {
            return Err(Error::DimensionMismatch {
                what: "pool outcome rows",
                expected: candidates.len(),
                got: outcomes.len(),
            });
        }
        let d = candidates[0].len();
        let n = outcomes[0].len();
        if d == 0 || n == 0 {
            return Err(Error::invalid("pool needs at least one feature and one outcome column"));
        }
        let mut seen = HashSet::new();
        let mut kept_x = Vec::with_capacity(candidates.len());
        let mut kept_y = Vec::with_capacity(candidates.len());
        let mut dropped = 0;
        for (x, y) in candidates.into_iter().zip(outcomes) {
            if x.len() != d || y.len() != n {
                return Err(Error::invalid("pool rows have inconsistent widths"));
            }
            if x.iter().chain(&y).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("pool entry"));
            }
            let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
            if !seen.insert(key) {
                dropped += 1;
                continue;
            }
            kept_x.push(x);
            kept_y.push(y);
        }
        let name = name.into();
        if dropped > 0 {
            log::warn!("pool {name}: dropped {dropped} duplicate candidate rows");
        }
        Ok(Self {
            name,
            candidates: kept_x,
            outcomes: kept_y,
            noise_std: vec![0.0; n],
        })
    }

    pub fn with_noise_std(mut self, noise_std: Vec<f64>) -> Result<Self> {
        if noise_std.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                what: "noise std",
                expected: self.output_dim(),
                got: noise_std.len(),
            });
        }
        if noise_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::invalid("noise std must be finite and non-negative"));
        }
        self.noise_std = noise_std;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.candidates[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.outcomes[0].len()
    }

    pub fn candidates(&self) -> &[Vec<f64>] {
        &self.candidates
    }

    pub fn noise_std(&self) -> &[f64] {
        &self.noise_std
    }

    /// Noiseless outcome of candidate `i`. Hidden from search strategies;
    /// used by the query interface and metrics.
    pub(crate) fn outcome(&self, i: usize) -> Result<&[f64]> {
        self.outcomes
            .get(i)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("pool index {i} out of range ({} candidates)", self.len())))
    }

    /// All noiseless outcomes, for range estimation and file export.
    pub fn outcomes(&self) -> &[Vec<f64>] {
        &self.outcomes
    }
}

fn header(d: usize, n: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).chain((1..=n).map(|j| format!("y{j}"))).collect()
}

/// Reads a pool CSV with header `x1,...,xd,y1,...,yn`.
pub fn load_pool(path: &Path, d: usize, n: usize) -> Result<PoolProblem> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.display().to_string(),
        line: line as usize,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => parse_err(0, format!("{other:?}")),
        })?;
    let want = header(d, n);
    let got: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if got != want {
        return Err(parse_err(1, format!("expected header {} but found {}", want.join(","), got.join(","))));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != d + n {
            return Err(parse_err(line, format!("expected {} fields, found {}", d + n, record.len())));
        }
        let mut row = Vec::with_capacity(d + n);
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("column {}: cannot parse {cell:?} as a number", want[col])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {}: non-finite value", want[col])));
            }
            row.push(v);
        }
        let y = row.split_off(d);
        xs.push(row);
        ys.push(y);
    }
    let name = path.file_stem().map_or_else(|| "pool".to_string(), |s| s.to_string_lossy().into_owned());
    PoolProblem::new(name, xs, ys)
}

/// Writes `pool` in the CSV format read by [`load_pool`]. Values use the
/// shortest round-trip representation.
pub fn write_pool(path: &Path, pool: &PoolProblem) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid(format!("{other:?}")),
    })?;
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid(format!("{other:?}")),
    };
    w.write_record(header(pool.input_dim(), pool.output_dim())).map_err(io)?;
    for (x, y) in pool.candidates.iter().zip(&pool.outcomes) {
        w.write_record(x.iter().chain(y).map(|v| v.to_string())).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Candidates in the synthetic long-tail pool.
pub const LONG_TAIL_SIZE: usize = 2000;
/// Exponent of the odd power map behind the long-tail pool.
pub const LONG_TAIL_POWER: i32 = 7;

/// Synthetic two-feature pool whose scalar outcome
/// `y = u^7 + 0.02 sin(2π x2)`, `u = 2 x1 − 1`, concentrates near zero:
/// under 25 equal bins the outer bins each hold well under 1% of the
/// candidates. `x1` is stratified so every bin is populated; candidate
/// order is shuffled.
pub fn long_tail_pool(seed: u64) -> PoolProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs: Vec<Vec<f64>> = (0..LONG_TAIL_SIZE)
        .map(|i| {
            let x1 = (i as f64 + rng.random::<f64>()) / LONG_TAIL_SIZE as f64;
            vec![x1, rng.random::<f64>()]
        })
        .collect();
    xs.shuffle(&mut rng);
    let ys = xs
        .iter()
        .map(|x| {
            let u = 2.0 * x[0] - 1.0;
            vec![u.powi(LONG_TAIL_POWER) + 0.02 * (std::f64::consts::TAU * x[1]).sin()]
        })
        .collect();
    PoolProblem::new("long-tail-pool", xs, ys).expect("generated pool is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_well_formed_file() {
        let f = write("x1,x2,y1\n0,1,0.5\n1,0,-2\n1,1,3e-3\n");
        let p = load_pool(f.path(), 2, 1).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.candidates()[1], vec![1.0, 0.0]);
        assert_eq!(p.outcomes()[2], vec![3e-3]);
    }

    #[test]
    fn bad_cell_reports_line() {
        let f = write("x1,y1\n0,1\n1,abc\n");
        match load_pool(f.path(), 1, 1) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("y1"));
            }
            other => panic!("{other:?}"),
        }
        let f = write("x1,y1\n0,1,2\n");
        assert!(matches!(load_pool(f.path(), 1, 1), Err(Error::Parse { line: 2, .. })));
        let f = write("x1,y1\n0,nan\n");
        assert!(matches!(load_pool(f.path(), 1, 1), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn header_must_match_dimensions() {
        let f = write("x1,x2,y1\n0,1,0.5\n");
        assert!(matches!(load_pool(f.path(), 1, 2), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicates_are_dropped() {
        let f = write("x1,y1\n0,1\n0,2\n1,3\n");
        let p = load_pool(f.path(), 1, 1).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.outcomes()[0], vec![1.0]);
    }

    #[test]
    fn round_trip_is_exact() {
        let pool = long_tail_pool(3);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_pool(f.path(), &pool).unwrap();
        let back = load_pool(f.path(), 2, 1).unwrap();
        assert_eq!(back.candidates(), pool.candidates());
        assert_eq!(back.outcomes(), pool.outcomes());
    }

    #[test]
    fn long_tail_pool_occupancy() {
        let pool = long_tail_pool(0);
        assert_eq!(pool.len(), LONG_TAIL_SIZE);
        let ys: Vec<f64> = pool.outcomes().iter().map(|y| y[0]).collect();
        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = [0usize; 25];
        for y in &ys {
            counts[(((y - lo) / (hi - lo) * 25.0).floor() as usize).min(24)] += 1;
        }
        assert!(counts.iter().all(|c| *c > 0), "{counts:?}");
        let sparse = counts.iter().filter(|c| (**c as f64) < 0.01 * LONG_TAIL_SIZE as f64).count();
        assert!(sparse >= 5, "{counts:?}");
    }
}

//! Reachability statistics across replicates.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trace::TraceFile;

/// Per-iteration reachability statistics of one algorithm.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Curve {
    pub algorithm: String,
    pub replicates: usize,
    pub mean: Vec<f64>,
    /// Unbiased (R − 1 denominator); zero for a single replicate.
    pub std: Vec<f64>,
    /// Final reachability of each replicate, in replicate order.
    pub finals: Vec<f64>,
}

impl Curve {
    pub fn final_mean(&self) -> f64 {
        *self.mean.last().expect("curves are nonempty")
    }

    pub fn final_std(&self) -> f64 {
        *self.std.last().expect("curves are nonempty")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateReport {
    pub config_hash: String,
    pub problem: String,
    pub n_init: usize,
    pub iterations: usize,
    pub num_bins: usize,
    /// In config order.
    pub curves: Vec<Curve>,
}

impl AggregateReport {
    pub fn curve(&self, algorithm: &str) -> Option<&Curve> {
        self.curves.iter().find(|c| c.algorithm == algorithm)
    }
}

/// Sample mean and unbiased standard deviation; the deviation of a single
/// value is zero.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n > 0, "mean of no values");
    // identical values are exact, free of summation rounding
    if values.iter().all(|v| *v == values[0]) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Groups complete traces by algorithm and summarizes each iteration.
/// All traces must come from one config.
pub fn aggregate(traces: &[TraceFile]) -> Result<AggregateReport> {
    let first = traces.first().ok_or_else(|| Error::Mixed("no traces to aggregate".into()))?;
    let m = &first.meta;
    for t in traces {
        if t.meta.config_hash != m.config_hash {
            return Err(Error::Mixed(format!(
                "config hashes {} and {} differ ({} replicate {})",
                m.config_hash, t.meta.config_hash, t.meta.algorithm, t.meta.replicate
            )));
        }
        if (t.meta.n_init, t.meta.iterations, t.meta.num_bins) != (m.n_init, m.iterations, m.num_bins) {
            return Err(Error::Mixed("traces differ in n_init, iterations or bin count".into()));
        }
        if t.rows.len() != m.n_init + m.iterations {
            return Err(Error::Mixed(format!("{} replicate {} is incomplete", t.meta.algorithm, t.meta.replicate)));
        }
    }
    let mut groups: BTreeMap<(usize, &str), Vec<&TraceFile>> = BTreeMap::new();
    for t in traces {
        groups.entry((t.meta.algorithm_index, &t.meta.algorithm)).or_default().push(t);
    }
    let len = m.n_init + m.iterations;
    let mut curves = Vec::with_capacity(groups.len());
    for ((_, name), mut group) in groups {
        group.sort_by_key(|t| t.meta.replicate);
        if group.windows(2).any(|w| w[0].meta.replicate == w[1].meta.replicate) {
            return Err(Error::Mixed(format!("{name}: duplicate replicate")));
        }
        let mut mean = Vec::with_capacity(len);
        let mut std = Vec::with_capacity(len);
        let mut column = vec![0.0; group.len()];
        for i in 0..len {
            for (c, t) in column.iter_mut().zip(&group) {
                *c = t.rows[i].reachability;
            }
            let (mu, sd) = mean_std(&column);
            mean.push(mu);
            std.push(sd);
        }
        curves.push(Curve {
            algorithm: name.to_string(),
            replicates: group.len(),
            mean,
            std,
            finals: group.iter().map(|t| t.rows[len - 1].reachability).collect(),
        });
    }
    Ok(AggregateReport {
        config_hash: m.config_hash.clone(),
        problem: m.problem.clone(),
        n_init: m.n_init,
        iterations: m.iterations,
        num_bins: m.num_bins,
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn two_point_formula() {
        let (m, s) = mean_std(&[0.4, 0.6]);
        assert_relative_eq!(m, 0.5, epsilon = 1e-15);
        assert_relative_eq!(s, 0.02f64.sqrt(), epsilon = 1e-15);
        assert_eq!(mean_std(&[0.3]), (0.3, 0.0));
        assert_eq!(mean_std(&[0.2, 0.2, 0.2]).1, 0.0);
    }
}

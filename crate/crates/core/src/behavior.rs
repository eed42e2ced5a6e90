//! Outcome spaces, the grid projection onto behavior bins, and the
//! behavior-gap / reachability metrics.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Axis-aligned box in outcome space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OutcomeBoxRepr<T>", bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct OutcomeBox<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OutcomeBoxRepr<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Real> TryFrom<OutcomeBoxRepr<T>> for OutcomeBox<T> {
    type Error = Error;

    fn try_from(r: OutcomeBoxRepr<T>) -> Result<Self> {
        OutcomeBox::new(r.lower, r.upper)
    }
}

impl<T: Real> OutcomeBox<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::invalid("outcome box needs at least one dimension"));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                what: "outcome box bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::NonFinite("outcome box bounds"));
            }
            if !(*lo < *hi) {
                return Err(Error::invalid(format!(
                    "outcome box dimension {i}: lower {lo} must be below upper {hi}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }
}

/// Index of a behavior bin in `[0, |B|)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BinId(pub usize);

/// Uniform grid over an [`OutcomeBox`]. Cells are half-open except the last
/// one along each axis, which also owns the upper boundary; outcomes outside
/// the box clamp to the nearest edge cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BehaviorSpaceRepr<T>", bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct BehaviorSpace<T> {
    #[serde(rename = "box")]
    bounds: OutcomeBox<T>,
    bins_per_dim: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BehaviorSpaceRepr<T> {
    #[serde(rename = "box")]
    bounds: OutcomeBoxRepr<T>,
    bins_per_dim: Vec<usize>,
}

impl<T: Real> TryFrom<BehaviorSpaceRepr<T>> for BehaviorSpace<T> {
    type Error = Error;

    fn try_from(r: BehaviorSpaceRepr<T>) -> Result<Self> {
        BehaviorSpace::new(OutcomeBox::try_from(r.bounds)?, r.bins_per_dim)
    }
}

impl<T: Real> BehaviorSpace<T> {
    pub fn new(bounds: OutcomeBox<T>, bins_per_dim: Vec<usize>) -> Result<Self> {
        if bins_per_dim.len() != bounds.dim() {
            return Err(Error::DimensionMismatch {
                what: "bins_per_dim",
                expected: bounds.dim(),
                got: bins_per_dim.len(),
            });
        }
        if bins_per_dim.iter().any(|&b| b == 0) {
            return Err(Error::invalid("bins_per_dim entries must be positive"));
        }
        bins_per_dim
            .iter()
            .try_fold(1usize, |acc, &b| acc.checked_mul(b))
            .ok_or_else(|| Error::invalid("total bin count overflows"))?;
        Ok(Self {
            bounds,
            bins_per_dim,
        })
    }

    /// Convenience constructor for an equal-width grid.
    pub fn grid(lower: Vec<T>, upper: Vec<T>, bins_per_dim: Vec<usize>) -> Result<Self> {
        Self::new(OutcomeBox::new(lower, upper)?, bins_per_dim)
    }

    pub fn outcome_dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn bounds(&self) -> &OutcomeBox<T> {
        &self.bounds
    }

    pub fn bins_per_dim(&self) -> &[usize] {
        &self.bins_per_dim
    }

    /// `|B|`.
    pub fn num_bins(&self) -> usize {
        self.bins_per_dim.iter().product()
    }

    pub fn contains(&self, bin: BinId) -> bool {
        bin.0 < self.num_bins()
    }

    /// The projection φ from an outcome to its behavior bin.
    pub fn project(&self, y: &[T]) -> Result<BinId> {
        if y.len() != self.outcome_dim() {
            return Err(Error::DimensionMismatch {
                what: "outcome",
                expected: self.outcome_dim(),
                got: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("outcome"));
        }
        let mut index = 0usize;
        for (i, &yi) in y.iter().enumerate() {
            index = index * self.bins_per_dim[i] + self.axis_cell(i, yi);
        }
        Ok(BinId(index))
    }

    fn axis_cell(&self, axis: usize, v: T) -> usize {
        let bins = self.bins_per_dim[axis];
        let lo = self.bounds.lower[axis];
        let hi = self.bounds.upper[axis];
        let scaled = (v - lo) / (hi - lo) * T::lit(bins as f64);
        if scaled <= T::zero() {
            return 0;
        }
        let cell = scaled.floor().as_f64();
        if cell >= bins as f64 {
            bins - 1
        } else {
            cell as usize
        }
    }

    /// Per-axis cell indices of a bin (row-major, first axis most significant).
    pub fn unravel(&self, bin: BinId) -> Vec<usize> {
        let mut rest = bin.0;
        let mut cells = vec![0; self.outcome_dim()];
        for i in (0..self.outcome_dim()).rev() {
            cells[i] = rest % self.bins_per_dim[i];
            rest /= self.bins_per_dim[i];
        }
        cells
    }

    /// Midpoint of a bin's cell.
    pub fn center(&self, bin: BinId) -> Vec<T> {
        self.unravel(bin)
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let lo = self.bounds.lower[i];
                let width = (self.bounds.upper[i] - lo) / T::lit(self.bins_per_dim[i] as f64);
                lo + width * T::lit(c as f64 + 0.5)
            })
            .collect()
    }
}

/// Metrics after observing `t` outcomes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachRecord {
    pub iteration: usize,
    pub distinct_bins: usize,
    pub behavior_gap: f64,
    pub reachability: f64,
}

/// Fraction of bins not yet observed.
pub fn behavior_gap<T: Real>(observed: &HashSet<BinId>, space: &BehaviorSpace<T>) -> f64 {
    1.0 - reach_from_count(observed.len(), space.num_bins())
}

fn reach_from_count(distinct: usize, total: usize) -> f64 {
    distinct.min(total) as f64 / total as f64
}

/// Reachability after each prefix of `trace`; record `t` (1-based) covers the
/// first `t` bins.
pub fn reachability_curve<T: Real>(trace: &[BinId], space: &BehaviorSpace<T>) -> Vec<ReachRecord> {
    let total = space.num_bins();
    let mut seen = HashSet::with_capacity(trace.len().min(total));
    trace
        .iter()
        .enumerate()
        .map(|(t, bin)| {
            seen.insert(*bin);
            let reach = reach_from_count(seen.len(), total);
            ReachRecord {
                iteration: t + 1,
                distinct_bins: seen.len(),
                behavior_gap: 1.0 - reach,
                reachability: reach,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line25() -> BehaviorSpace<f64> {
        BehaviorSpace::grid(vec![0.0], vec![10.0], vec![25]).unwrap()
    }

    fn square10() -> BehaviorSpace<f64> {
        BehaviorSpace::grid(vec![0.0, 0.0], vec![1.0, 1.0], vec![10, 10]).unwrap()
    }

    #[test]
    fn project_examples() {
        let s = line25();
        assert_eq!(s.project(&[0.2]).unwrap(), BinId(0));
        assert_eq!(s.project(&[10.0]).unwrap(), BinId(24));
        assert_eq!(square10().project(&[0.55, 0.05]).unwrap(), BinId(50));
    }

    #[test]
    fn project_clamps_out_of_box() {
        let s = line25();
        assert_eq!(s.project(&[-3.0]).unwrap(), BinId(0));
        assert_eq!(s.project(&[1e9]).unwrap(), BinId(24));
    }

    #[test]
    fn project_errors() {
        let s = square10();
        assert!(matches!(
            s.project(&[0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(s.project(&[0.5, f64::NAN]), Err(Error::NonFinite(_))));
        assert!(matches!(
            s.project(&[f64::INFINITY, 0.5]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn invalid_spaces_rejected() {
        assert!(OutcomeBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(OutcomeBox::<f64>::new(vec![], vec![]).is_err());
        assert!(BehaviorSpace::grid(vec![0.0], vec![1.0], vec![0]).is_err());
        assert!(BehaviorSpace::grid(vec![0.0], vec![1.0], vec![2, 2]).is_err());
    }

    #[test]
    fn gap_examples() {
        let s = line25();
        assert_eq!(behavior_gap(&HashSet::new(), &s), 1.0);
        let all: HashSet<_> = (0..25).map(BinId).collect();
        assert_eq!(behavior_gap(&all, &s), 0.0);
        let five: HashSet<_> = (0..5).map(BinId).collect();
        assert!((behavior_gap(&five, &s) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn curve_examples() {
        let s = line25();
        let curve = reachability_curve(&[BinId(0), BinId(0), BinId(1)], &s);
        let reach: Vec<f64> = curve.iter().map(|r| r.reachability).collect();
        assert_eq!(reach, vec![0.04, 0.04, 0.08]);

        let mut order: Vec<BinId> = (0..25).rev().map(BinId).collect();
        order.swap(3, 17);
        assert_eq!(reachability_curve(&order, &s).last().unwrap().reachability, 1.0);
    }

    #[test]
    fn curve_matches_prefix_oracle() {
        use rand::{Rng, SeedableRng};
        let s = BehaviorSpace::grid(vec![0.0], vec![1.0], vec![100]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let bins: Vec<BinId> = (0..10).map(|_| BinId(rng.random_range(0..100))).collect();
        let curve = reachability_curve(&bins, &s);
        for t in 1..=bins.len() {
            let mut distinct = bins[..t].to_vec();
            distinct.sort();
            distinct.dedup();
            assert_eq!(curve[t - 1].reachability, distinct.len() as f64 / 100.0);
        }
    }

    proptest! {
        #[test]
        fn centers_project_to_themselves(b0 in 1usize..12, b1 in 1usize..12, b2 in 1usize..5) {
            let s = BehaviorSpace::grid(vec![-2.0, 0.0, 5.0], vec![3.0, 0.1, 9.0], vec![b0, b1, b2]).unwrap();
            for b in 0..s.num_bins() {
                prop_assert_eq!(s.project(&s.center(BinId(b))).unwrap(), BinId(b));
            }
        }

        #[test]
        fn project_is_total(y0 in -1e6f64..1e6, y1 in -1e6f64..1e6) {
            let s = square10();
            let b = s.project(&[y0, y1]).unwrap();
            prop_assert!(s.contains(b));
        }

        #[test]
        fn curve_monotone_and_bounded(bins in proptest::collection::vec(0usize..25, 1..80)) {
            let s = line25();
            let trace: Vec<BinId> = bins.iter().copied().map(BinId).collect();
            let curve = reachability_curve(&trace, &s);
            let mut prev = 0.0;
            for r in &curve {
                prop_assert!((0.0..=1.0).contains(&r.behavior_gap));
                prop_assert!(r.reachability >= prev);
                prop_assert!((r.reachability - (1.0 - r.behavior_gap)).abs() < 1e-15);
                prev = r.reachability;
            }
            let distinct: HashSet<_> = trace.iter().collect();
            prop_assert_eq!(curve.last().unwrap().reachability == 1.0, distinct.len() == 25);
        }
    }
}

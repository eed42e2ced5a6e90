//! k-nearest-neighbor novelty acquisition over sampled outcomes.
//!
//! The score of a candidate is the mean distance from its sampled outcome to
//! the `k` nearest reference outcomes, where the references are posterior
//! means at the observed inputs (optionally one per occupied behavior bin).

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{BehaviorSpace, BinId};
use crate::gp::{Dataset, FittedGp};
use crate::optimize::{minimize_box, Bounds, LbfgsOptions};
use crate::sampling::FunctionSample;
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
}

/// Order of the sorted distance vector whose first `k` entries are averaged.
/// `Ascending` gives the k-nearest-neighbor score; `Descending` is the
/// literal k-farthest reading kept for comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SortDirection {
    #[default]
    Ascending,
    Descending,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoveltyConfig {
    pub k: usize,
    pub metric: Metric,
    /// Keep one reference per occupied bin (the first inserted). Cheaper,
    /// but once `k` reaches the number of occupied bins the score stops
    /// reacting to new points inside covered bins, so it is off by default.
    pub dedup: bool,
    pub sort: SortDirection,
}

impl Default for NoveltyConfig {
    fn default() -> Self {
        Self {
            k: 10,
            metric: Metric::Euclidean,
            dedup: false,
            sort: SortDirection::Ascending,
        }
    }
}

impl NoveltyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("novelty k must be at least 1"));
        }
        Ok(())
    }
}

/// Bins whose predicted membership disqualifies a candidate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UgConstraint {
    forbidden: HashSet<BinId>,
    /// When set, continuous optimization subtracts this from infeasible
    /// points instead of rejecting them outright.
    soft_penalty: Option<f64>,
}

impl UgConstraint {
    pub fn new<T: Real>(forbidden: impl IntoIterator<Item = BinId>, space: &BehaviorSpace<T>) -> Result<Self> {
        let forbidden: HashSet<BinId> = forbidden.into_iter().collect();
        if let Some(b) = forbidden.iter().find(|b| !space.contains(**b)) {
            return Err(Error::invalid(format!("forbidden bin {} outside the behavior space", b.0)));
        }
        Ok(Self {
            forbidden,
            soft_penalty: None,
        })
    }

    pub fn with_soft_penalty(mut self, penalty: f64) -> Result<Self> {
        if !(penalty.is_finite() && penalty > 0.0) {
            return Err(Error::invalid("soft penalty must be positive and finite"));
        }
        self.soft_penalty = Some(penalty);
        Ok(self)
    }

    pub fn forbidden_bins(&self) -> &HashSet<BinId> {
        &self.forbidden
    }

    pub fn soft_penalty(&self) -> Option<f64> {
        self.soft_penalty
    }

    pub fn forbids(&self, bin: BinId) -> bool {
        self.forbidden.contains(&bin)
    }

    /// Whether `x` is allowed, judged on the posterior-mean prediction.
    pub fn admits<T: Real>(&self, x: &[T], gp: &FittedGp<T>, space: &BehaviorSpace<T>) -> Result<bool> {
        let mu = gp.posterior_mean(x)?;
        Ok(!self.forbids(space.project(&mu)?))
    }
}

/// The constraint together with what it needs to predict bins.
#[derive(Clone, Copy, Debug)]
pub struct Constraint<'a, T: Real> {
    pub ug: &'a UgConstraint,
    pub gp: &'a FittedGp<T>,
    pub space: &'a BehaviorSpace<T>,
}

impl<T: Real> Constraint<'_, T> {
    pub fn admits(&self, x: &[T]) -> Result<bool> {
        self.ug.admits(x, self.gp, self.space)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSet<T> {
    points: Vec<Vec<T>>,
    bins: Vec<BinId>,
    dedup: bool,
}

impl<T: Real> ReferenceSet<T> {
    /// References from explicit outcome points, binned in `space`.
    pub fn from_points(points: Vec<Vec<T>>, space: &BehaviorSpace<T>, dedup: bool) -> Result<Self> {
        let mut set = Self {
            points: Vec::with_capacity(points.len()),
            bins: Vec::with_capacity(points.len()),
            dedup,
        };
        let mut seen = HashSet::new();
        for p in points {
            let bin = space.project(&p)?;
            if dedup && !seen.insert(bin) {
                continue;
            }
            set.points.push(p);
            set.bins.push(bin);
        }
        Ok(set)
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn bins(&self) -> &[BinId] {
        &self.bins
    }

    pub fn is_dedup(&self) -> bool {
        self.dedup
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn outcome_dim(&self) -> Option<usize> {
        self.points.first().map(Vec::len)
    }
}

/// Posterior means at every observed input, deduplicated per bin (first
/// inserted wins) when `config.dedup` is set.
pub fn build_references<T: Real>(
    gp: &FittedGp<T>,
    data: &Dataset<T>,
    space: &BehaviorSpace<T>,
    config: &NoveltyConfig,
) -> Result<ReferenceSet<T>> {
    if data.is_empty() {
        return Err(Error::EmptyReferences);
    }
    let means = data
        .inputs()
        .iter()
        .map(|x| gp.posterior_mean(x))
        .collect::<Result<Vec<_>>>()?;
    ReferenceSet::from_points(means, space, config.dedup)
}

pub fn distance<T: Real>(a: &[T], b: &[T], metric: Metric) -> T {
    match metric {
        Metric::Euclidean => a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + (*x - *y) * (*x - *y)).sqrt(),
        Metric::Manhattan => a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + (*x - *y).abs()),
    }
}

/// Adds `scale · ∂dist(y, r)/∂y` to `out`; zero at coincident points.
fn accumulate_distance_grad<T: Real>(y: &[T], r: &[T], dist: T, metric: Metric, scale: T, out: &mut [T]) {
    match metric {
        Metric::Euclidean => {
            if dist > T::zero() {
                for ((o, a), b) in out.iter_mut().zip(y).zip(r) {
                    *o += scale * (*a - *b) / dist;
                }
            }
        }
        Metric::Manhattan => {
            for ((o, a), b) in out.iter_mut().zip(y).zip(r) {
                let diff = *a - *b;
                if diff > T::zero() {
                    *o += scale;
                } else if diff < T::zero() {
                    *o -= scale;
                }
            }
        }
    }
}

fn check_refs<T: Real>(y: &[T], refs: &ReferenceSet<T>) -> Result<()> {
    match refs.outcome_dim() {
        None => Err(Error::EmptyReferences),
        Some(n) if n != y.len() => Err(Error::DimensionMismatch {
            what: "outcome vector",
            expected: n,
            got: y.len(),
        }),
        Some(_) => Ok(()),
    }
}

fn distances<T: Real>(y: &[T], refs: &ReferenceSet<T>, metric: Metric) -> Vec<T> {
    refs.points.iter().map(|r| distance(y, r, metric)).collect()
}

fn cmp<T: Real>(a: &T, b: &T) -> std::cmp::Ordering {
    a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)
}

/// Mean of the `k` smallest distances from `y` to the references, by
/// partial selection.
pub fn novelty_naive<T: Real>(y: &[T], refs: &ReferenceSet<T>, config: &NoveltyConfig) -> Result<T> {
    check_refs(y, refs)?;
    let mut d = distances(y, refs, config.metric);
    let k = config.k.clamp(1, d.len());
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
    }
    let sum = d[..k].iter().fold(T::zero(), |s, v| s + *v);
    Ok(sum / T::lit(k as f64))
}

/// Sorted form: the full distance vector is sorted and the first `k` entries
/// are selected by an indicator vector. With ascending order this equals
/// [`novelty_naive`].
pub fn novelty_sorted<T: Real>(y: &[T], refs: &ReferenceSet<T>, config: &NoveltyConfig) -> Result<T> {
    novelty_sorted_with_gradient(y, refs, config).map(|(v, _)| v)
}

/// Value and gradient with respect to `y` of the sorted form, holding the
/// sort permutation fixed at `y`.
pub fn novelty_sorted_with_gradient<T: Real>(
    y: &[T],
    refs: &ReferenceSet<T>,
    config: &NoveltyConfig,
) -> Result<(T, Vec<T>)> {
    check_refs(y, refs)?;
    let d = distances(y, refs, config.metric);
    let mut order: Vec<usize> = (0..d.len()).collect();
    match config.sort {
        SortDirection::Ascending => order.sort_by(|a, b| cmp(&d[*a], &d[*b])),
        SortDirection::Descending => order.sort_by(|a, b| cmp(&d[*b], &d[*a])),
    }
    let k = config.k.clamp(1, d.len());
    let indicator: Vec<T> = (0..d.len()).map(|i| if i < k { T::one() } else { T::zero() }).collect();
    let kt = T::lit(k as f64);
    let mut value = T::zero();
    let mut grad = vec![T::zero(); y.len()];
    for (e, &i) in indicator.iter().zip(&order) {
        if *e == T::zero() {
            continue;
        }
        value += *e * d[i];
        accumulate_distance_grad(y, &refs.points[i], d[i], config.metric, *e / kt, &mut grad);
    }
    Ok((value / kt, grad))
}

/// Novelty of the sampled outcome at `x`; `−∞` when the constraint rejects
/// the predicted bin of `x`.
pub fn acquisition_value<T: Real, S: FunctionSample<T> + ?Sized>(
    x: &[T],
    path: &S,
    refs: &ReferenceSet<T>,
    config: &NoveltyConfig,
    constraint: Option<Constraint<'_, T>>,
) -> Result<T> {
    if let Some(c) = constraint {
        if !c.admits(x)? {
            return Ok(T::lit(f64::NEG_INFINITY));
        }
    }
    novelty_sorted(&path.eval(x)?, refs, config)
}

/// Unconstrained acquisition and its input gradient `Jᵀ ∇_y α`.
pub fn acquisition_with_gradient<T: Real, S: FunctionSample<T> + ?Sized>(
    x: &[T],
    path: &S,
    refs: &ReferenceSet<T>,
    config: &NoveltyConfig,
) -> Result<(T, Vec<T>)> {
    let (y, jac) = path.eval_with_jacobian(x)?;
    let (v, gy) = novelty_sorted_with_gradient(&y, refs, config)?;
    let mut gx = vec![T::zero(); x.len()];
    for (j, g) in gy.iter().enumerate() {
        for (p, o) in gx.iter_mut().enumerate() {
            *o += *g * jac[(j, p)];
        }
    }
    Ok((v, gx))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcqOptimOptions {
    /// Local ascents per call.
    pub restarts: usize,
    /// Uniform probes scored before the ascents; the best `restarts` of them
    /// become the starting points. Zero uses plain uniform starts.
    pub raw_samples: usize,
    pub optimizer: LbfgsOptions,
}

impl Default for AcqOptimOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            raw_samples: 1024,
            optimizer: LbfgsOptions {
                max_iters: 50,
                ..LbfgsOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcqOptimum<T> {
    pub x: Vec<T>,
    pub value: T,
    /// No feasible start was found; `x` maximizes the unconstrained score
    /// over the starts.
    pub infeasible_fallback: bool,
}

/// Multi-start projected L-BFGS ascent of the acquisition over `bounds`.
pub fn maximize_continuous<T: Real, S: FunctionSample<T> + ?Sized>(
    path: &S,
    refs: &ReferenceSet<T>,
    config: &NoveltyConfig,
    bounds: &Bounds<T>,
    options: &AcqOptimOptions,
    seed: u64,
    constraint: Option<Constraint<'_, T>>,
) -> Result<AcqOptimum<T>> {
    config.validate()?;
    if options.restarts == 0 {
        return Err(Error::invalid("acquisition restarts must be at least 1"));
    }
    if bounds.dim() != path.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "acquisition bounds",
            expected: path.input_dim(),
            got: bounds.dim(),
        });
    }
    check_refs(&vec![T::zero(); path.output_dim()], refs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes = options.raw_samples.max(options.restarts);
    // (unconstrained score, feasible, point)
    let mut scored = Vec::with_capacity(probes);
    for _ in 0..probes {
        let x = bounds.sample_uniform(&mut rng);
        let v = novelty_sorted(&path.eval(&x)?, refs, config)?;
        let ok = match constraint {
            Some(c) => c.admits(&x)?,
            None => true,
        };
        scored.push((v, ok, x));
    }
    let penalty = constraint.and_then(|c| c.ug.soft_penalty()).map(T::lit);
    let hard = constraint.is_some() && penalty.is_none();
    if hard && !scored.iter().any(|s| s.1) {
        let (value, _, x) = scored.into_iter().max_by(|a, b| cmp(&a.0, &b.0)).expect("at least one probe");
        return Ok(AcqOptimum {
            x,
            value,
            infeasible_fallback: true,
        });
    }
    let adjusted = |v: T, ok: bool| -> T {
        match (ok, penalty) {
            (true, _) => v,
            (false, Some(p)) => v - p,
            (false, None) => T::lit(f64::NEG_INFINITY),
        }
    };
    let mut starts: Vec<(T, Vec<T>)> = scored.into_iter().map(|(v, ok, x)| (adjusted(v, ok), x)).collect();
    if options.raw_samples > 0 {
        starts.sort_by(|a, b| cmp(&b.0, &a.0));
    }
    starts.truncate(options.restarts);
    starts.retain(|s| s.0 > T::lit(f64::NEG_INFINITY));

    let mut failure = None;
    let mut objective = |x: &[T]| -> (T, Vec<T>) {
        let feasible = match constraint {
            Some(c) => match c.admits(x) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    return (T::lit(f64::INFINITY), vec![T::zero(); x.len()]);
                }
            },
            None => true,
        };
        if !feasible && penalty.is_none() {
            return (T::lit(f64::INFINITY), vec![T::zero(); x.len()]);
        }
        match acquisition_with_gradient(x, path, refs, config) {
            Ok((v, g)) => (-adjusted(v, feasible), g.into_iter().map(|gi| -gi).collect()),
            Err(e) => {
                failure.get_or_insert(e);
                (T::lit(f64::INFINITY), vec![T::zero(); x.len()])
            }
        }
    };
    let mut best: Option<(T, Vec<T>)> = None;
    for (v0, x0) in &starts {
        let local = minimize_box(&mut objective, x0, bounds, &options.optimizer);
        let (v, x) = if -local.value >= *v0 { (-local.value, local.x) } else { (*v0, x0.clone()) };
        if best.as_ref().is_none_or(|b| v > b.0) {
            best = Some((v, x));
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let (value, x) = best.expect("a feasible start exists");
    Ok(AcqOptimum {
        x,
        value,
        infeasible_fallback: false,
    })
}

/// Sampled outcomes over a candidate pool: either a callable path or a
/// precomputed `C × n` draw.
pub enum PoolSample<'a, T: Real> {
    Path(&'a dyn FunctionSample<T>),
    Joint(&'a DMatrix<T>),
}

/// Exact argmax over unevaluated, feasible candidates; ties go to the lowest
/// index. Candidates for which `admissible` is false are skipped.
pub fn maximize_discrete<T: Real>(
    sample: PoolSample<'_, T>,
    refs: &ReferenceSet<T>,
    config: &NoveltyConfig,
    pool: &[Vec<T>],
    evaluated: &HashSet<usize>,
    constraint: Option<Constraint<'_, T>>,
) -> Result<usize> {
    config.validate()?;
    if let PoolSample::Joint(m) = &sample {
        if m.nrows() != pool.len() {
            return Err(Error::DimensionMismatch {
                what: "joint sample rows",
                expected: pool.len(),
                got: m.nrows(),
            });
        }
    }
    let mut best: Option<(usize, T)> = None;
    let mut any_open = false;
    for (i, x) in pool.iter().enumerate() {
        if evaluated.contains(&i) {
            continue;
        }
        any_open = true;
        if let Some(c) = constraint {
            if !c.admits(x)? {
                continue;
            }
        }
        let y: Vec<T> = match &sample {
            PoolSample::Path(p) => p.eval(x)?,
            PoolSample::Joint(m) => m.row(i).iter().copied().collect(),
        };
        let v = novelty_sorted(&y, refs, config)?;
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    match best {
        Some((i, _)) => Ok(i),
        None if any_open => Err(Error::invalid("no unevaluated candidate satisfies the constraint")),
        None => Err(Error::PoolExhausted),
    }
}

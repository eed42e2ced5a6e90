//! Benchmark problems: closed-form functions over input boxes and finite
//! candidate pools, queried through a common noisy interface.
//!
//! Every query returns the noisy outcome seen by search strategies and the
//! noiseless outcome, which is reserved for metrics.

mod functions;
mod pool;

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use functions::{
    ackley, multi_output_plus, rosenbrock, staircase, styblinski_tang, ACKLEY_A, ACKLEY_B, ACKLEY_C, PLUS_DECAY,
};
pub use pool::{load_pool, long_tail_pool, write_pool, PoolProblem, LONG_TAIL_POWER, LONG_TAIL_SIZE};

use crate::behavior::BehaviorSpace;
use crate::optimize::Bounds;
use crate::{Error, Result};

/// Samples used by `make_space` with an automatic range.
pub const AUTO_RANGE_SAMPLES: usize = 100_000;
/// Seed of the automatic range estimate.
pub const AUTO_RANGE_SEED: u64 = 0x5EED_0001;
/// Samples and seed behind the default noise level.
pub const NOISE_SAMPLES: usize = 10_000;
pub const NOISE_SEED: u64 = 0x5EED_0002;
/// Default noise as a fraction of the empirical outcome standard deviation.
pub const DEFAULT_NOISE_FRACTION: f64 = 0.01;

type Evaluator = Arc<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync>;

/// A function over an input box.
#[derive(Clone)]
pub struct ContinuousProblem {
    name: String,
    bounds: Bounds<f64>,
    output_dim: usize,
    evaluator: Evaluator,
    noise_std: Vec<f64>,
    analytic_range: Option<Vec<(f64, f64)>>,
}

impl fmt::Debug for ContinuousProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousProblem")
            .field("name", &self.name)
            .field("bounds", &self.bounds)
            .field("output_dim", &self.output_dim)
            .field("noise_std", &self.noise_std)
            .finish_non_exhaustive()
    }
}

impl ContinuousProblem {
    pub fn new<F>(name: impl Into<String>, bounds: Bounds<f64>, output_dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        if output_dim == 0 {
            return Err(Error::invalid("problem needs at least one output"));
        }
        Ok(Self {
            name: name.into(),
            bounds,
            output_dim,
            evaluator: Arc::new(f),
            noise_std: vec![0.0; output_dim],
            analytic_range: None,
        })
    }

    /// Known outcome range over the box, preferred by automatic spaces.
    pub fn with_analytic_range(mut self, range: Vec<(f64, f64)>) -> Result<Self> {
        check_ranges(&range, self.output_dim)?;
        self.analytic_range = Some(range);
        Ok(self)
    }

    pub fn with_noise_std(mut self, noise_std: Vec<f64>) -> Result<Self> {
        check_noise(&noise_std, self.output_dim)?;
        self.noise_std = noise_std;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bounds(&self) -> &Bounds<f64> {
        &self.bounds
    }

    pub fn input_dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn noise_std(&self) -> &[f64] {
        &self.noise_std
    }

    pub fn analytic_range(&self) -> Option<&[(f64, f64)]> {
        self.analytic_range.as_deref()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "problem input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if !self.bounds.contains(x) {
            return Err(Error::invalid(format!("input outside the {} box", self.name)));
        }
        let y = (self.evaluator)(x)?;
        if y.len() != self.output_dim || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("problem outcome"));
        }
        Ok(y)
    }
}

fn check_noise(noise_std: &[f64], n: usize) -> Result<()> {
    if noise_std.len() != n {
        return Err(Error::DimensionMismatch {
            what: "noise std",
            expected: n,
            got: noise_std.len(),
        });
    }
    if noise_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::invalid("noise std must be finite and non-negative"));
    }
    Ok(())
}

fn check_ranges(range: &[(f64, f64)], n: usize) -> Result<()> {
    if range.len() != n {
        return Err(Error::DimensionMismatch {
            what: "outcome range",
            expected: n,
            got: range.len(),
        });
    }
    if range.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
        return Err(Error::invalid("outcome ranges need finite lo < hi"));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub enum Problem {
    Continuous(ContinuousProblem),
    Pool(PoolProblem),
}

/// Where to query: a point in the box or a pool index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Query<'a> {
    Point(&'a [f64]),
    Index(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub noisy: Vec<f64>,
    pub noiseless: Vec<f64>,
}

impl Problem {
    pub fn name(&self) -> &str {
        match self {
            Problem::Continuous(p) => p.name(),
            Problem::Pool(p) => p.name(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Problem::Continuous(p) => p.input_dim(),
            Problem::Pool(p) => p.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Problem::Continuous(p) => p.output_dim(),
            Problem::Pool(p) => p.output_dim(),
        }
    }

    pub fn noise_std(&self) -> &[f64] {
        match self {
            Problem::Continuous(p) => p.noise_std(),
            Problem::Pool(p) => p.noise_std(),
        }
    }

    pub fn is_pool(&self) -> bool {
        matches!(self, Problem::Pool(_))
    }

    pub fn with_noise_std(self, noise_std: Vec<f64>) -> Result<Self> {
        Ok(match self {
            Problem::Continuous(p) => Problem::Continuous(p.with_noise_std(noise_std)?),
            Problem::Pool(p) => Problem::Pool(p.with_noise_std(noise_std)?),
        })
    }

    /// Input box; for pools, the bounding box of the candidates.
    pub fn input_bounds(&self) -> Bounds<f64> {
        match self {
            Problem::Continuous(p) => p.bounds().clone(),
            Problem::Pool(p) => {
                let d = p.input_dim();
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for x in p.candidates() {
                    for i in 0..d {
                        lo[i] = lo[i].min(x[i]);
                        hi[i] = hi[i].max(x[i]);
                    }
                }
                for i in 0..d {
                    if hi[i] <= lo[i] {
                        hi[i] = lo[i] + 1.0;
                    }
                }
                Bounds::new(lo, hi).expect("widened bounds are valid")
            }
        }
    }

    pub fn noiseless(&self, q: Query<'_>) -> Result<Vec<f64>> {
        match (self, q) {
            (Problem::Continuous(p), Query::Point(x)) => p.evaluate(x),
            (Problem::Pool(p), Query::Index(i)) => p.outcome(i).map(<[f64]>::to_vec),
            (Problem::Continuous(_), Query::Index(_)) => Err(Error::invalid("index query on a continuous problem")),
            (Problem::Pool(_), Query::Point(_)) => Err(Error::invalid("point query on a pool problem")),
        }
    }

    /// Noiseless value plus independent Gaussian noise per output.
    pub fn query<R: Rng + ?Sized>(&self, q: Query<'_>, rng: &mut R) -> Result<Observation> {
        let noiseless = self.noiseless(q)?;
        let noisy = noiseless
            .iter()
            .zip(self.noise_std())
            .map(|(v, s)| {
                let z: f64 = StandardNormal.sample(rng);
                v + s * z
            })
            .collect();
        Ok(Observation { noisy, noiseless })
    }

    /// Noiseless outcomes at `count` uniform inputs (continuous) or at every
    /// candidate (pool).
    fn outcome_sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        match self {
            Problem::Continuous(p) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..count).map(|_| p.evaluate(&p.bounds().sample_uniform(&mut rng))).collect()
            }
            Problem::Pool(p) => Ok(p.outcomes().to_vec()),
        }
    }

    /// `DEFAULT_NOISE_FRACTION` of the empirical per-output standard deviation.
    pub fn default_noise_std(&self) -> Result<Vec<f64>> {
        let ys = self.outcome_sample(NOISE_SAMPLES, NOISE_SEED)?;
        let n = ys.len() as f64;
        Ok((0..self.output_dim())
            .map(|j| {
                let mean = ys.iter().map(|y| y[j]).sum::<f64>() / n;
                let var = ys.iter().map(|y| (y[j] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                DEFAULT_NOISE_FRACTION * var.sqrt()
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RangeProvenance {
    Analytic,
    Explicit,
    Empirical { sample_count: usize, seed: u64 },
    /// Exact extremes over a finite pool.
    PoolExact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeSpec {
    pub ranges: Vec<(f64, f64)>,
    pub provenance: RangeProvenance,
}

/// How `make_space` obtains outcome ranges.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum RangeChoice {
    /// Analytic range when the problem has one, exact extremes for pools,
    /// otherwise `AUTO_RANGE_SAMPLES` uniform noiseless samples.
    #[default]
    Auto,
    Explicit(Vec<(f64, f64)>),
}

/// Builds the behavior grid for `problem`.
pub fn make_space(
    problem: &Problem,
    bins_per_dim: &[usize],
    range: &RangeChoice,
) -> Result<(BehaviorSpace<f64>, RangeSpec)> {
    let n = problem.output_dim();
    let spec = match (range, problem) {
        (RangeChoice::Explicit(r), _) => {
            check_ranges(r, n)?;
            RangeSpec {
                ranges: r.clone(),
                provenance: RangeProvenance::Explicit,
            }
        }
        (RangeChoice::Auto, Problem::Continuous(p)) if p.analytic_range().is_some() => RangeSpec {
            ranges: p.analytic_range().expect("checked").to_vec(),
            provenance: RangeProvenance::Analytic,
        },
        (RangeChoice::Auto, _) => {
            let ys = problem.outcome_sample(AUTO_RANGE_SAMPLES, AUTO_RANGE_SEED)?;
            let ranges: Vec<(f64, f64)> = (0..n)
                .map(|j| {
                    ys.iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y[j]), hi.max(y[j])))
                })
                .collect();
            if let Some(j) = ranges.iter().position(|(lo, hi)| hi - lo < 1e-9) {
                return Err(Error::invalid(format!("degenerate outcome range for output {}", j + 1)));
            }
            RangeSpec {
                ranges,
                provenance: if problem.is_pool() {
                    RangeProvenance::PoolExact
                } else {
                    RangeProvenance::Empirical {
                        sample_count: AUTO_RANGE_SAMPLES,
                        seed: AUTO_RANGE_SEED,
                    }
                },
            }
        }
    };
    let (lo, hi): (Vec<f64>, Vec<f64>) = spec.ranges.iter().copied().unzip();
    let space = BehaviorSpace::grid(lo, hi, bins_per_dim.to_vec())?;
    Ok((space, spec))
}

/// Names and one-line descriptions of the built-in problems.
pub const BUILTIN_PROBLEMS: &[(&str, &str)] = &[
    ("ackley", "Ackley function on [-32.768, 32.768]^d, one output"),
    ("rosenbrock", "Rosenbrock function on [-5, 10]^d, one output"),
    ("styblinski-tang", "Styblinski-Tang function on [-5, 5]^d, one output"),
    ("multi-output-plus", "plus-shaped long-tail surrogate on [-5, 5]^6, two outputs"),
    ("staircase", "monotone staircase on [0, 1], one output in [0, 1]"),
    ("long-tail-pool", "synthetic 2000-candidate pool with a long-tailed scalar outcome"),
    ("pool", "candidate pool read from a CSV file"),
];

/// Constructs a built-in problem with zero noise. `dim` applies to the
/// dimension-generic functions and defaults to 4; `seed` to generated pools.
pub fn builtin(name: &str, dim: Option<usize>, seed: u64) -> Result<Problem> {
    let box_of = |lo: f64, hi: f64, d: usize| Bounds::new(vec![lo; d], vec![hi; d]);
    let generic_dim = || -> Result<usize> {
        match dim {
            Some(0) => Err(Error::invalid("dimension must be positive")),
            Some(d) => Ok(d),
            None => Ok(4),
        }
    };
    let fixed_dim = |want: usize| -> Result<()> {
        match dim {
            Some(d) if d != want => Err(Error::invalid(format!("{name} has fixed dimension {want}"))),
            _ => Ok(()),
        }
    };
    let p = match name {
        "ackley" => {
            let d = generic_dim()?;
            ContinuousProblem::new(name, box_of(-32.768, 32.768, d)?, 1, |x| Ok(vec![ackley(x)]))?
        }
        "rosenbrock" => {
            let d = generic_dim()?;
            if d < 2 {
                return Err(Error::invalid("rosenbrock needs at least two dimensions"));
            }
            ContinuousProblem::new(name, box_of(-5.0, 10.0, d)?, 1, |x| Ok(vec![rosenbrock(x)]))?
        }
        "styblinski-tang" => {
            let d = generic_dim()?;
            ContinuousProblem::new(name, box_of(-5.0, 5.0, d)?, 1, |x| Ok(vec![styblinski_tang(x)]))?
        }
        "multi-output-plus" => {
            fixed_dim(6)?;
            ContinuousProblem::new(name, box_of(-5.0, 5.0, 6)?, 2, |x| multi_output_plus(x).map(|y| y.to_vec()))?
                .with_analytic_range(vec![(-5.0, 5.0), (-5.0, 5.0)])?
        }
        "staircase" => {
            fixed_dim(1)?;
            ContinuousProblem::new(name, box_of(0.0, 1.0, 1)?, 1, |x| Ok(vec![staircase(x[0])]))?
                .with_analytic_range(vec![(0.0, 1.0)])?
        }
        "long-tail-pool" => {
            fixed_dim(2)?;
            return Ok(Problem::Pool(long_tail_pool(seed)));
        }
        "pool" => return Err(Error::invalid("pool problems are loaded from a file")),
        other => return Err(Error::invalid(format!("unknown problem {other:?}"))),
    };
    Ok(Problem::Continuous(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_names_resolve() {
        for (name, _) in BUILTIN_PROBLEMS.iter().filter(|(n, _)| *n != "pool") {
            let p = builtin(name, None, 0).unwrap();
            assert_eq!(p.name(), *name);
        }
        assert!(builtin("nope", None, 0).is_err());
        assert!(builtin("multi-output-plus", Some(3), 0).is_err());
        assert_eq!(builtin("ackley", Some(12), 0).unwrap().input_dim(), 12);
    }

    #[test]
    fn noiseless_query_is_exact() {
        let p = builtin("ackley", Some(3), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [1.0, -2.0, 0.5];
        let o = p.query(Query::Point(&x), &mut rng).unwrap();
        assert_eq!(o.noisy, vec![ackley(&x)]);
        assert_eq!(o.noiseless, o.noisy);
        assert!(p.query(Query::Point(&[40.0, 0.0, 0.0]), &mut rng).is_err());
        assert!(p.query(Query::Index(0), &mut rng).is_err());
    }

    #[test]
    fn noise_has_configured_scale_and_is_uncorrelated() {
        let p = builtin("multi-output-plus", None, 0).unwrap().with_noise_std(vec![0.2, 0.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = [1.0, 2.0, 0.0, 0.0, 0.0, 0.0];
        let truth = p.noiseless(Query::Point(&x)).unwrap();
        let n = 10_000;
        let e: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let o = p.query(Query::Point(&x), &mut rng).unwrap();
                [o.noisy[0] - truth[0], o.noisy[1] - truth[1]]
            })
            .collect();
        let nf = n as f64;
        let mean = |j: usize| e.iter().map(|v| v[j]).sum::<f64>() / nf;
        let (m0, m1) = (mean(0), mean(1));
        let sd = |j: usize, m: f64| (e.iter().map(|v| (v[j] - m).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
        let (s0, s1) = (sd(0, m0), sd(1, m1));
        assert!((s0 / 0.2 - 1.0).abs() < 0.03 && (s1 / 0.2 - 1.0).abs() < 0.03);
        let r = e.iter().map(|v| (v[0] - m0) * (v[1] - m1)).sum::<f64>() / ((nf - 1.0) * s0 * s1);
        assert!(r.abs() < 0.05);
    }

    #[test]
    fn pool_query_returns_row_plus_noise() {
        let pool = PoolProblem::new("t", vec![vec![0.0], vec![1.0]], vec![vec![3.0], vec![4.0]]).unwrap();
        let p = Problem::Pool(pool);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(p.query(Query::Index(1), &mut rng).unwrap().noisy, vec![4.0]);
        assert!(p.query(Query::Index(2), &mut rng).is_err());
        assert!(p.query(Query::Point(&[0.0]), &mut rng).is_err());
    }

    #[test]
    fn spaces() {
        let p = builtin("ackley", Some(4), 0).unwrap();
        let (s, spec) = make_space(&p, &[25], &RangeChoice::Auto).unwrap();
        assert_eq!(s.num_bins(), 25);
        assert!(spec.ranges[0].0 >= 0.0);
        assert!(matches!(spec.provenance, RangeProvenance::Empirical { sample_count: 100_000, .. }));
        let (again, _) = make_space(&p, &[25], &RangeChoice::Auto).unwrap();
        assert_eq!(s, again);

        let mop = builtin("multi-output-plus", None, 0).unwrap();
        let (s, spec) = make_space(&mop, &[10, 10], &RangeChoice::Auto).unwrap();
        assert_eq!(s.num_bins(), 100);
        assert_eq!(spec.provenance, RangeProvenance::Analytic);

        let (s, spec) = make_space(&p, &[5], &RangeChoice::Explicit(vec![(0.0, 25.0)])).unwrap();
        assert_eq!(s.bounds().upper(), &[25.0]);
        assert_eq!(spec.provenance, RangeProvenance::Explicit);
        assert!(make_space(&p, &[5], &RangeChoice::Explicit(vec![(1.0, 1.0)])).is_err());

        let flat = Problem::Continuous(
            ContinuousProblem::new("flat", Bounds::new(vec![0.0], vec![1.0]).unwrap(), 1, |_| Ok(vec![2.0])).unwrap(),
        );
        assert!(make_space(&flat, &[5], &RangeChoice::Auto).is_err());

        let pool = builtin("long-tail-pool", None, 0).unwrap();
        let (_, spec) = make_space(&pool, &[25], &RangeChoice::Auto).unwrap();
        assert_eq!(spec.provenance, RangeProvenance::PoolExact);
    }

    #[test]
    fn default_noise_is_one_percent_of_spread() {
        let p = builtin("staircase", None, 0).unwrap();
        let s = p.default_noise_std().unwrap();
        // outcome is nearly uniform on [0, 1], std ≈ 0.29
        assert!(s[0] > 0.002 && s[0] < 0.004, "{s:?}");
    }
}

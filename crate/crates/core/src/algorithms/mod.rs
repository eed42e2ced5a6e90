//! Search strategies and the replicate loop.
//!
//! Every strategy sees the observed (noisy) data only and proposes one
//! query per step. [`run_replicate`] seeds the data with uniform random
//! points, drives a strategy for `T` steps and records a [`RunTrace`] whose
//! bins come from the noiseless outcomes.

mod baselines;
mod beacon;

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use baselines::{archive_novelty, EaConfig, NsEa, RandomSearch, SobolConfig, SobolSearch};
pub use beacon::{Beacon, BeaconConfig, HyperRecord, MaxVar, MaxVarConfig, Surrogate};

use crate::behavior::{BehaviorSpace, BinId};
use crate::gp::Dataset;
use crate::problems::{Observation, Problem, Query};
use crate::{Error, Result};

/// Algorithm selection as written in experiment configs, keyed by `name`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum AlgorithmConfig {
    Beacon(BeaconConfig),
    UgBeacon(BeaconConfig),
    Rs,
    Sobol(SobolConfig),
    Maxvar(MaxVarConfig),
    NsEa(EaConfig),
}

impl AlgorithmConfig {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmConfig::Beacon(_) => "beacon",
            AlgorithmConfig::UgBeacon(_) => "ug-beacon",
            AlgorithmConfig::Rs => "rs",
            AlgorithmConfig::Sobol(_) => "sobol",
            AlgorithmConfig::Maxvar(_) => "maxvar",
            AlgorithmConfig::NsEa(_) => "ns-ea",
        }
    }

    /// Checks the settings, and their compatibility with `problem` and
    /// `space` when given.
    pub fn validate(&self, problem: Option<&Problem>, space: Option<&BehaviorSpace<f64>>) -> Result<()> {
        match self {
            AlgorithmConfig::Beacon(c) => {
                if !c.forbidden_bins.is_empty() {
                    return Err(Error::invalid("forbidden_bins only applies to ug-beacon"));
                }
                c.validate(space)
            }
            AlgorithmConfig::UgBeacon(c) => {
                if c.forbidden_bins.is_empty() {
                    return Err(Error::invalid("ug-beacon needs at least one forbidden bin"));
                }
                c.validate(space)
            }
            AlgorithmConfig::Rs => Ok(()),
            AlgorithmConfig::Sobol(_) => {
                if let Some(p) = problem {
                    crate::sobol::Sobol::new(p.input_dim())?;
                }
                Ok(())
            }
            AlgorithmConfig::Maxvar(c) => c.validate(),
            AlgorithmConfig::NsEa(c) => {
                c.validate()?;
                if problem.is_some_and(Problem::is_pool) {
                    return Err(Error::Unsupported("ns-ea does not apply to pool problems".into()));
                }
                Ok(())
            }
        }
    }
}

/// What a strategy sees at each step.
pub struct StepContext<'a> {
    pub problem: &'a Problem,
    pub space: &'a BehaviorSpace<f64>,
    pub data: &'a Dataset<f64>,
    /// Pool indices already queried.
    pub evaluated: &'a HashSet<usize>,
    /// Zero-based search step.
    pub iteration: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Choice {
    Point(Vec<f64>),
    Index(usize),
}

/// Per-step diagnostics stored in the trace.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepInfo {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hyper: Option<HyperRecord>,
    /// Behavior bin of the posterior mean at the chosen input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_bin: Option<usize>,
    /// Pool mode with a constraint: whether any unevaluated candidate was
    /// predicted feasible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feasible_available: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acquisition: Option<f64>,
    /// The constraint could not be met and was dropped for this step.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub infeasible_fallback: bool,
    /// Hyperparameter fitting failed; previous values were reused.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub fit_failed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub choice: Choice,
    pub info: StepInfo,
}

pub trait Strategy: Send {
    fn name(&self) -> &'static str;

    fn propose(&mut self, ctx: &StepContext<'_>, rng: &mut ChaCha8Rng) -> Result<Proposal>;

    /// Called after the proposal was queried and appended to the data as
    /// row `ctx.data.len() - 1`.
    fn observe(&mut self, _ctx: &StepContext<'_>) {}
}

/// Builds the strategy for `config`; `seed` fixes any internal sequence.
pub fn make_strategy(config: &AlgorithmConfig, problem: &Problem, space: &BehaviorSpace<f64>, seed: u64) -> Result<Box<dyn Strategy>> {
    config.validate(Some(problem), Some(space))?;
    Ok(match config {
        AlgorithmConfig::Beacon(c) => Box::new(Beacon::new(c.clone(), None)),
        AlgorithmConfig::UgBeacon(c) => {
            let mut ug = crate::acquisition::UgConstraint::new(c.forbidden_bins.iter().map(|b| BinId(*b)), space)?;
            if let Some(p) = c.soft_penalty {
                ug = ug.with_soft_penalty(p)?;
            }
            Box::new(Beacon::new(c.clone(), Some(ug)))
        }
        AlgorithmConfig::Rs => Box::new(RandomSearch),
        AlgorithmConfig::Sobol(c) => Box::new(SobolSearch::new(c, problem.input_dim(), seed)?),
        AlgorithmConfig::Maxvar(c) => Box::new(MaxVar::new(c.clone())),
        AlgorithmConfig::NsEa(c) => Box::new(NsEa::new(c.clone())),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Search steps after the initial design.
    pub iterations: usize,
    pub n_init: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Zero-based query number; the first `n_init` rows are the initial design.
    pub iteration: usize,
    pub input: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub index: Option<usize>,
    pub noisy: Vec<f64>,
    pub noiseless: Vec<f64>,
    /// Bin of the noiseless outcome (the metric bin).
    pub bin: usize,
    pub noisy_bin: usize,
    pub distinct_bins: usize,
    pub reachability: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step: Option<StepInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub algorithm: String,
    pub seed: u64,
    pub n_init: usize,
    pub iterations: usize,
    pub rows: Vec<TraceRow>,
}

impl RunTrace {
    pub fn bins(&self) -> Vec<BinId> {
        self.rows.iter().map(|r| BinId(r.bin)).collect()
    }

    pub fn final_reachability(&self) -> Option<f64> {
        self.rows.last().map(|r| r.reachability)
    }
}

/// A replicate that stopped early, with everything recorded up to the error.
#[derive(Debug)]
pub struct ReplicateFailure {
    pub error: Error,
    pub partial: RunTrace,
}

impl std::fmt::Display for ReplicateFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} after {} rows: {}", self.partial.algorithm, self.partial.rows.len(), self.error)
    }
}

impl std::error::Error for ReplicateFailure {}

struct Recorder<'a> {
    problem: &'a Problem,
    space: &'a BehaviorSpace<f64>,
    data: Dataset<f64>,
    evaluated: HashSet<usize>,
    seen: HashSet<BinId>,
    trace: RunTrace,
    query_rng: ChaCha8Rng,
}

impl Recorder<'_> {
    fn record(&mut self, choice: &Choice, step: Option<StepInfo>) -> Result<Observation> {
        let (q, input, index) = match choice {
            Choice::Point(x) => (Query::Point(x), x.clone(), None),
            Choice::Index(i) => {
                let Problem::Pool(pool) = self.problem else {
                    return Err(Error::invalid("index choice on a continuous problem"));
                };
                if !self.evaluated.insert(*i) {
                    return Err(Error::invalid(format!("pool index {i} queried twice")));
                }
                let x = pool
                    .candidates()
                    .get(*i)
                    .ok_or_else(|| Error::invalid(format!("pool index {i} out of range")))?;
                (Query::Index(*i), x.clone(), Some(*i))
            }
        };
        let obs = self.problem.query(q, &mut self.query_rng)?;
        let bin = self.space.project(&obs.noiseless)?;
        let noisy_bin = self.space.project(&obs.noisy)?;
        self.seen.insert(bin);
        self.data.push(input.clone(), obs.noisy.clone())?;
        let distinct = self.seen.len();
        self.trace.rows.push(TraceRow {
            iteration: self.trace.rows.len(),
            input,
            index,
            noisy: obs.noisy.clone(),
            noiseless: obs.noiseless.clone(),
            bin: bin.0,
            noisy_bin: noisy_bin.0,
            distinct_bins: distinct,
            reachability: distinct as f64 / self.space.num_bins() as f64,
            step,
        });
        Ok(obs)
    }
}

/// Independent streams of one replicate seed.
const STREAM_INIT: u64 = 0;
const STREAM_QUERY: u64 = 1;
const STREAM_STRATEGY: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Runs one replicate: `n_init` uniform random queries followed by
/// `iterations` strategy steps. The trace is fully determined by the
/// arguments.
pub fn run_replicate(
    algorithm: &AlgorithmConfig,
    problem: &Problem,
    space: &BehaviorSpace<f64>,
    run: &RunConfig,
) -> std::result::Result<RunTrace, Box<ReplicateFailure>> {
    let mut rec = Recorder {
        problem,
        space,
        data: Dataset::new(problem.input_dim(), problem.output_dim()),
        evaluated: HashSet::new(),
        seen: HashSet::new(),
        trace: RunTrace {
            algorithm: algorithm.name().to_string(),
            seed: run.seed,
            n_init: run.n_init,
            iterations: run.iterations,
            rows: Vec::with_capacity(run.n_init + run.iterations),
        },
        query_rng: stream(run.seed, STREAM_QUERY),
    };
    match drive(algorithm, &mut rec, run) {
        Ok(()) => Ok(rec.trace),
        Err(error) => Err(Box::new(ReplicateFailure {
            error,
            partial: rec.trace,
        })),
    }
}

fn drive(algorithm: &AlgorithmConfig, rec: &mut Recorder<'_>, run: &RunConfig) -> Result<()> {
    if run.n_init == 0 || run.iterations == 0 {
        return Err(Error::invalid("n_init and iterations must be at least 1"));
    }
    if rec.space.outcome_dim() != rec.problem.output_dim() {
        return Err(Error::DimensionMismatch {
            what: "behavior space outcome dimension",
            expected: rec.problem.output_dim(),
            got: rec.space.outcome_dim(),
        });
    }
    let mut init_rng = stream(run.seed, STREAM_INIT);
    let mut strat_rng = stream(run.seed, STREAM_STRATEGY);
    let mut strategy = make_strategy(algorithm, rec.problem, rec.space, strat_rng.random())?;

    let initial: Vec<Choice> = match rec.problem {
        Problem::Continuous(p) => (0..run.n_init).map(|_| Choice::Point(p.bounds().sample_uniform(&mut init_rng))).collect(),
        Problem::Pool(p) => {
            if run.n_init + run.iterations > p.len() {
                return Err(Error::invalid(format!(
                    "pool of {} candidates cannot supply {} distinct queries",
                    p.len(),
                    run.n_init + run.iterations
                )));
            }
            rand::seq::index::sample(&mut init_rng, p.len(), run.n_init).into_iter().map(Choice::Index).collect()
        }
    };
    for c in &initial {
        rec.record(c, None)?;
    }
    for t in 0..run.iterations {
        let proposal = {
            let ctx = StepContext {
                problem: rec.problem,
                space: rec.space,
                data: &rec.data,
                evaluated: &rec.evaluated,
                iteration: t,
            };
            strategy.propose(&ctx, &mut strat_rng)?
        };
        rec.record(&proposal.choice, Some(proposal.info))?;
        let ctx = StepContext {
            problem: rec.problem,
            space: rec.space,
            data: &rec.data,
            evaluated: &rec.evaluated,
            iteration: t,
        };
        strategy.observe(&ctx);
    }
    Ok(())
}

/// Unevaluated pool indices in ascending order.
pub(crate) fn open_indices(len: usize, evaluated: &HashSet<usize>) -> Vec<usize> {
    (0..len).filter(|i| !evaluated.contains(i)).collect()
}

//! Surrogate-driven strategies: BEACON (optionally behavior-constrained)
//! and maximum-variance active learning.

use std::collections::HashSet;

use log::warn;
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{open_indices, Choice, Proposal, StepContext, StepInfo, Strategy};
use crate::acquisition::{
    build_references, maximize_continuous, maximize_discrete, AcqOptimOptions, Constraint, NoveltyConfig, PoolSample,
    UgConstraint,
};
use crate::behavior::{BehaviorSpace, BinId};
use crate::gp::{fit_hyperparameters, Dataset, FitOptions, FittedGp, KernelSpec, PriorMean};
use crate::optimize::minimize_box;
use crate::problems::Problem;
use crate::sampling::{draw_path, exact_joint_sample, DEFAULT_FEATURES};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeaconConfig {
    pub fit: FitOptions,
    /// Hyperparameters are re-optimized every `refit_every` steps; in
    /// between, the posterior is refit with the last values.
    pub refit_every: usize,
    pub novelty: NoveltyConfig,
    pub acquisition: AcqOptimOptions,
    /// Random features per path sample.
    pub features: usize,
    /// Largest candidate subset drawn jointly in pool mode with a
    /// non-stationary kernel.
    pub joint_sample_cap: usize,
    /// Bins ruled out for `ug-beacon`.
    pub forbidden_bins: Vec<usize>,
    /// Continuous mode only: subtract this from infeasible points instead of
    /// rejecting them.
    pub soft_penalty: Option<f64>,
}

impl Default for BeaconConfig {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            refit_every: 1,
            novelty: NoveltyConfig::default(),
            acquisition: AcqOptimOptions::default(),
            features: DEFAULT_FEATURES,
            joint_sample_cap: 1000,
            forbidden_bins: Vec::new(),
            soft_penalty: None,
        }
    }
}

impl BeaconConfig {
    pub fn validate(&self, space: Option<&BehaviorSpace<f64>>) -> Result<()> {
        check_fit(&self.fit, self.refit_every)?;
        self.novelty.validate()?;
        check_acq(&self.acquisition)?;
        if self.features == 0 || self.joint_sample_cap == 0 {
            return Err(Error::invalid("features and joint_sample_cap must be positive"));
        }
        if let Some(space) = space {
            if let Some(b) = self.forbidden_bins.iter().find(|b| !space.contains(BinId(**b))) {
                return Err(Error::invalid(format!("forbidden bin {b} outside the behavior space")));
            }
        }
        Ok(())
    }
}

fn check_fit(fit: &FitOptions, refit_every: usize) -> Result<()> {
    if refit_every == 0 || fit.restarts == 0 {
        return Err(Error::invalid("refit_every and fit.restarts must be positive"));
    }
    if !(fit.noise_floor.is_finite() && fit.noise_floor > 0.0) {
        return Err(Error::invalid("fit.noise_floor must be positive"));
    }
    Ok(())
}

fn check_acq(acq: &AcqOptimOptions) -> Result<()> {
    if acq.restarts == 0 {
        return Err(Error::invalid("acquisition.restarts must be positive"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaxVarConfig {
    pub fit: FitOptions,
    pub refit_every: usize,
    pub acquisition: AcqOptimOptions,
}

impl Default for MaxVarConfig {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            refit_every: 1,
            acquisition: AcqOptimOptions::default(),
        }
    }
}

impl MaxVarConfig {
    pub fn validate(&self) -> Result<()> {
        check_fit(&self.fit, self.refit_every)?;
        check_acq(&self.acquisition)
    }
}

/// Kernel hyperparameters as recorded in traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperRecord {
    /// Whether this step re-optimized the hyperparameters.
    pub refit: bool,
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub log_likelihood: f64,
}

/// GP surrogate with a refit schedule and warm-started hyperparameters.
#[derive(Clone, Debug)]
pub struct Surrogate {
    fit: FitOptions,
    refit_every: usize,
    theta: Option<Vec<f64>>,
    kernel: Option<KernelSpec<f64>>,
}

impl Surrogate {
    pub fn new(fit: FitOptions, refit_every: usize) -> Self {
        Self {
            fit,
            refit_every,
            theta: None,
            kernel: None,
        }
    }

    /// Posterior for `data`, re-optimizing hyperparameters when due. A failed
    /// fit reuses the previous kernel and sets `info.fit_failed`.
    pub fn update(&mut self, data: &Dataset<f64>, iteration: usize, seed: u64, info: &mut StepInfo) -> Result<FittedGp<f64>> {
        let due = self.kernel.is_none() || iteration % self.refit_every == 0;
        if due {
            match fit_hyperparameters(data, &self.fit, seed, self.theta.as_deref()) {
                Ok(h) => {
                    self.theta = Some(h.theta);
                    self.kernel = Some(h.kernel);
                }
                Err(e) if self.kernel.is_some() => {
                    warn!("hyperparameter fit failed at step {iteration}, keeping previous values: {e}");
                    info.fit_failed = true;
                }
                Err(e) => return Err(e),
            }
        }
        let kernel = self.kernel.as_ref().expect("kernel set above");
        let gp = FittedGp::fit(data, kernel, &PriorMean::Empirical)?;
        info.hyper = Some(HyperRecord {
            refit: due && !info.fit_failed,
            lengthscales: kernel.lengthscales().to_vec(),
            signal_variance: kernel.signal_variance(),
            noise_variance: kernel.noise_variance(),
            log_likelihood: gp.log_likelihood(),
        });
        Ok(gp)
    }
}

/// BEACON: fit the surrogate, draw one posterior sample, and query the
/// input whose sampled outcome is most novel against the posterior-mean
/// references. With a [`UgConstraint`] it is UG-BEACON.
pub struct Beacon {
    config: BeaconConfig,
    constraint: Option<UgConstraint>,
    surrogate: Surrogate,
}

impl Beacon {
    pub fn new(config: BeaconConfig, constraint: Option<UgConstraint>) -> Self {
        let surrogate = Surrogate::new(config.fit.clone(), config.refit_every);
        Self {
            config,
            constraint,
            surrogate,
        }
    }
}

impl Strategy for Beacon {
    fn name(&self) -> &'static str {
        if self.constraint.is_some() {
            "ug-beacon"
        } else {
            "beacon"
        }
    }

    fn propose(&mut self, ctx: &StepContext<'_>, rng: &mut ChaCha8Rng) -> Result<Proposal> {
        let fit_seed = rng.next_u64();
        let path_seed = rng.next_u64();
        let acq_seed = rng.next_u64();
        let mut info = StepInfo::default();
        let gp = self.surrogate.update(ctx.data, ctx.iteration, fit_seed, &mut info)?;
        let refs = build_references(&gp, ctx.data, ctx.space, &self.config.novelty)?;
        let constraint = self.constraint.as_ref().map(|ug| Constraint {
            ug,
            gp: &gp,
            space: ctx.space,
        });
        let cfg = &self.config;

        let (choice, x) = match ctx.problem {
            Problem::Continuous(p) => {
                let path = draw_path(&gp, cfg.features, path_seed)?;
                let best = maximize_continuous(&path, &refs, &cfg.novelty, p.bounds(), &cfg.acquisition, acq_seed, constraint)?;
                info.infeasible_fallback = best.infeasible_fallback;
                info.acquisition = best.value.is_finite().then_some(best.value);
                (Choice::Point(best.x.clone()), best.x)
            }
            Problem::Pool(pool) => {
                let cands = pool.candidates();
                let mut open = open_indices(cands.len(), ctx.evaluated);
                if open.is_empty() {
                    return Err(Error::PoolExhausted);
                }
                if let Some(c) = constraint {
                    let mut feasible = Vec::with_capacity(open.len());
                    for &i in &open {
                        if c.admits(&cands[i])? {
                            feasible.push(i);
                        }
                    }
                    info.feasible_available = Some(!feasible.is_empty());
                    if feasible.is_empty() {
                        info.infeasible_fallback = true;
                    } else {
                        open = feasible;
                    }
                }
                // from here on `open` holds only admissible candidates
                let idx = if gp.kernel().family().is_stationary() {
                    let path = draw_path(&gp, cfg.features, path_seed)?;
                    let closed: HashSet<usize> = (0..cands.len()).filter(|i| open.binary_search(i).is_err()).collect();
                    maximize_discrete(PoolSample::Path(&path), &refs, &cfg.novelty, cands, &closed, None)?
                } else {
                    let mut sub_rng = ChaCha8Rng::seed_from_u64(path_seed);
                    let subset: Vec<usize> = if open.len() > cfg.joint_sample_cap {
                        let mut s: Vec<usize> = sample(&mut sub_rng, open.len(), cfg.joint_sample_cap).into_iter().map(|k| open[k]).collect();
                        s.sort_unstable();
                        s
                    } else {
                        open.clone()
                    };
                    let xs: Vec<Vec<f64>> = subset.iter().map(|i| cands[*i].clone()).collect();
                    let joint = exact_joint_sample(&gp, &xs, sub_rng.random())?;
                    let k = maximize_discrete(PoolSample::Joint(&joint), &refs, &cfg.novelty, &xs, &HashSet::new(), None)?;
                    subset[k]
                };
                (Choice::Index(idx), cands[idx].clone())
            }
        };
        info.predicted_bin = Some(ctx.space.project(&gp.posterior_mean(&x)?)?.0);
        Ok(Proposal { choice, info })
    }
}

/// Maximum-variance active learning: query where the summed posterior
/// variance over outputs is largest.
pub struct MaxVar {
    config: MaxVarConfig,
    surrogate: Surrogate,
}

impl MaxVar {
    pub fn new(config: MaxVarConfig) -> Self {
        let surrogate = Surrogate::new(config.fit.clone(), config.refit_every);
        Self { config, surrogate }
    }
}

fn total_variance(gp: &FittedGp<f64>, x: &[f64]) -> Result<f64> {
    Ok(gp.posterior_variance(x)?.iter().sum())
}

impl Strategy for MaxVar {
    fn name(&self) -> &'static str {
        "maxvar"
    }

    fn propose(&mut self, ctx: &StepContext<'_>, rng: &mut ChaCha8Rng) -> Result<Proposal> {
        let fit_seed = rng.next_u64();
        let acq_seed = rng.next_u64();
        let mut info = StepInfo::default();
        let gp = self.surrogate.update(ctx.data, ctx.iteration, fit_seed, &mut info)?;
        let (choice, x, value) = match ctx.problem {
            Problem::Continuous(p) => {
                let bounds = p.bounds();
                let opts = &self.config.acquisition;
                let mut probe_rng = ChaCha8Rng::seed_from_u64(acq_seed);
                let mut starts = Vec::with_capacity(opts.raw_samples.max(opts.restarts));
                for _ in 0..opts.raw_samples.max(opts.restarts) {
                    let x = bounds.sample_uniform(&mut probe_rng);
                    starts.push((total_variance(&gp, &x)?, x));
                }
                if opts.raw_samples > 0 {
                    starts.sort_by(|a, b| b.0.total_cmp(&a.0));
                }
                starts.truncate(opts.restarts);
                let objective = |x: &[f64]| match gp.posterior_variance_gradient(x) {
                    Ok((v, g)) => {
                        let grad = (0..x.len()).map(|p| -g.column(p).sum()).collect();
                        (-v.iter().sum::<f64>(), grad)
                    }
                    Err(_) => (f64::INFINITY, vec![0.0; x.len()]),
                };
                let mut best = starts[0].clone();
                for (v0, x0) in &starts {
                    let r = minimize_box(objective, x0, bounds, &opts.optimizer);
                    let (v, x) = if -r.value >= *v0 { (-r.value, r.x) } else { (*v0, x0.clone()) };
                    if v > best.0 {
                        best = (v, x);
                    }
                }
                (Choice::Point(best.1.clone()), best.1, best.0)
            }
            Problem::Pool(pool) => {
                let cands = pool.candidates();
                let mut best: Option<(usize, f64)> = None;
                for i in open_indices(cands.len(), ctx.evaluated) {
                    let v = total_variance(&gp, &cands[i])?;
                    if best.is_none_or(|b| v > b.1) {
                        best = Some((i, v));
                    }
                }
                let (i, v) = best.ok_or(Error::PoolExhausted)?;
                (Choice::Index(i), cands[i].clone(), v)
            }
        };
        info.acquisition = Some(value);
        info.predicted_bin = Some(ctx.space.project(&gp.posterior_mean(&x)?)?.0);
        Ok(Proposal { choice, info })
    }
}

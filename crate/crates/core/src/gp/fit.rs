use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::posterior::{centered_targets, check_data, extended_gram, resolve_mean, PriorMean};
use super::{rank_one_coupling, Dataset, KernelFamily, KernelSpec};
use crate::linalg::Factor;
use crate::optimize::{maximize_box, Bounds, LbfgsOptions};
use crate::{Error, Real, Result};

const SQRT5: f64 = 2.236_067_977_499_79;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// How outputs are coupled in the extended-space kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// Learned unit-diagonal `v vᵀ + diag(1 − v²)`.
    #[default]
    RankOne,
    /// Independent outputs.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub family: KernelFamily,
    pub coupling: Coupling,
    /// Number of multi-start ascents (the first always starts at the
    /// data-driven heuristic).
    pub restarts: usize,
    /// Lower bound on the learned noise variance.
    pub noise_floor: f64,
    pub optimizer: LbfgsOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            family: KernelFamily::Matern52,
            coupling: Coupling::RankOne,
            restarts: 3,
            noise_floor: 1e-6,
            optimizer: LbfgsOptions {
                max_iters: 60,
                f_tol: 1e-9,
                ..Default::default()
            },
        }
    }
}

/// Layout of the unconstrained hyperparameter vector:
/// `[ln ℓ_1..ln ℓ_d, ln σ_f², ln σ_n², u_1..u_n]`, where the lengthscales are
/// absent for tanimoto and the coupling entries `v = tanh(u)` only exist for
/// learned rank-one coupling with two or more outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HyperLayout {
    pub family: KernelFamily,
    pub input_dim: usize,
    pub output_dim: usize,
    pub coupling: Coupling,
}

impl HyperLayout {
    pub fn new(family: KernelFamily, input_dim: usize, output_dim: usize, coupling: Coupling) -> Self {
        Self {
            family,
            input_dim,
            output_dim,
            coupling,
        }
    }

    fn num_lengthscales(&self) -> usize {
        if self.family.is_stationary() {
            self.input_dim
        } else {
            0
        }
    }

    fn learns_coupling(&self) -> bool {
        self.coupling == Coupling::RankOne && self.output_dim >= 2
    }

    fn signal_index(&self) -> usize {
        self.num_lengthscales()
    }

    fn noise_index(&self) -> usize {
        self.num_lengthscales() + 1
    }

    fn coupling_offset(&self) -> usize {
        self.num_lengthscales() + 2
    }

    pub fn len(&self) -> usize {
        self.coupling_offset() + if self.learns_coupling() { self.output_dim } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn coupling_vector<T: Real>(&self, theta: &[T]) -> Vec<T> {
        theta[self.coupling_offset()..].iter().map(|u| u.tanh()).collect()
    }

    /// Kernel described by `theta`.
    pub fn kernel<T: Real>(&self, theta: &[T]) -> Result<KernelSpec<T>> {
        if theta.len() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "hyperparameter vector",
                expected: self.len(),
                got: theta.len(),
            });
        }
        let ls = theta[..self.num_lengthscales()].iter().map(|t| t.exp()).collect();
        let coupling = if self.learns_coupling() {
            rank_one_coupling(&self.coupling_vector(theta))
        } else {
            DMatrix::identity(self.output_dim, self.output_dim)
        };
        KernelSpec::new(
            self.family,
            ls,
            theta[self.signal_index()].exp(),
            theta[self.noise_index()].exp(),
            coupling,
        )
    }

    /// Log marginal likelihood (empirical prior mean) and its gradient with
    /// respect to `theta`.
    pub fn lml_with_gradient<T: Real>(&self, data: &Dataset<T>, theta: &[T]) -> Result<(T, Vec<T>)> {
        let kernel = self.kernel(theta)?;
        check_data(data, &kernel)?;
        let n = self.output_dim;
        let big_n = data.len();
        let mean = resolve_mean(data, &PriorMean::Empirical)?;
        let factor = Factor::new(extended_gram(&kernel, data.inputs(), true), "log marginal likelihood")?;
        let targets = centered_targets(data, &mean);
        let alpha = factor.solve(&targets);
        let lml = -T::lit(0.5) * targets.dot(&alpha)
            - factor.half_log_det()
            - T::lit(0.5 * LN_2PI * (big_n * n) as f64);

        // W = α αᵀ − K⁻¹; every gradient entry is ½ tr(W ∂K).
        let mut w = factor.inverse();
        w.neg_mut();
        w.ger(T::one(), &alpha, &alpha, T::one());

        let half = T::lit(0.5);
        let sv = kernel.signal_variance();
        let c = kernel.task_coupling();
        let nls = self.num_lengthscales();
        let ls = kernel.lengthscales();
        let v = if self.learns_coupling() {
            self.coupling_vector(theta)
        } else {
            Vec::new()
        };
        let mut grad = vec![T::zero(); self.len()];
        let mut u2 = vec![T::zero(); nls];
        let mut s_q = vec![T::zero(); v.len()];
        for i in 0..big_n {
            let xi = &data.inputs()[i];
            for i2 in 0..big_n {
                let xj = &data.inputs()[i2];
                let mut s_c = T::zero();
                s_q.iter_mut().for_each(|s| *s = T::zero());
                for j in 0..n {
                    for j2 in 0..n {
                        let wv = w[(i * n + j, i2 * n + j2)];
                        s_c += wv * c[(j, j2)];
                        if j != j2 {
                            for (q, sq) in s_q.iter_mut().enumerate() {
                                let dq = if j == q {
                                    v[j2]
                                } else if j2 == q {
                                    v[j]
                                } else {
                                    continue;
                                };
                                *sq += wv * (T::one() - v[q] * v[q]) * dq;
                            }
                        }
                    }
                }
                let (kx, dfac) = match self.family {
                    KernelFamily::Tanimoto => (super::tanimoto(xi, xj), T::zero()),
                    KernelFamily::SquaredExponential => {
                        let mut r2 = T::zero();
                        for p in 0..nls {
                            let u = (xi[p] - xj[p]) / ls[p];
                            u2[p] = u * u;
                            r2 += u2[p];
                        }
                        let k = (-half * r2).exp();
                        (k, k)
                    }
                    KernelFamily::Matern52 => {
                        let mut r2 = T::zero();
                        for p in 0..nls {
                            let u = (xi[p] - xj[p]) / ls[p];
                            u2[p] = u * u;
                            r2 += u2[p];
                        }
                        let sr = T::lit(SQRT5) * r2.sqrt();
                        let e = (-sr).exp();
                        let k = (T::one() + sr + T::lit(5.0 / 3.0) * r2) * e;
                        (k, T::lit(5.0 / 3.0) * (T::one() + sr) * e)
                    }
                };
                for p in 0..nls {
                    grad[p] += half * sv * dfac * u2[p] * s_c;
                }
                grad[self.signal_index()] += half * sv * kx * s_c;
                for (q, sq) in s_q.iter().enumerate() {
                    grad[self.coupling_offset() + q] += half * sv * kx * *sq;
                }
            }
        }
        grad[self.noise_index()] = half * kernel.noise_variance() * w.trace();
        Ok((lml, grad))
    }
}

/// Result of [`fit_hyperparameters`].
#[derive(Clone, Debug)]
pub struct HyperFit<T: Real> {
    pub kernel: KernelSpec<T>,
    /// Unconstrained parameter vector, reusable as a warm start.
    pub theta: Vec<T>,
    pub log_likelihood: T,
    /// Log marginal likelihood at the initialization heuristic.
    pub initial_log_likelihood: T,
    /// All inputs were identical; the heuristic was returned unfitted.
    pub degenerate: bool,
}

struct Heuristic<T> {
    theta: Vec<T>,
    bounds: Bounds<T>,
    spread: Vec<T>,
    degenerate: bool,
}

fn heuristic<T: Real>(data: &Dataset<T>, layout: &HyperLayout, noise_floor: f64) -> Result<Heuristic<T>> {
    let big_n = T::lit(data.len() as f64);
    let mut theta = vec![T::zero(); layout.len()];
    let mut lower = vec![T::zero(); layout.len()];
    let mut upper = vec![T::zero(); layout.len()];
    let mut spread = vec![T::zero(); layout.len()];
    let mut degenerate = true;
    for p in 0..data.input_dim() {
        let col = data.inputs().iter().map(|x| x[p]);
        let mean = col.clone().fold(T::zero(), |s, v| s + v) / big_n;
        let var = col.clone().fold(T::zero(), |s, v| s + (v - mean) * (v - mean)) / big_n;
        let (lo, hi) = col.fold((T::lit(f64::INFINITY), T::lit(f64::NEG_INFINITY)), |(a, b), v| (a.min(v), b.max(v)));
        if hi > lo {
            degenerate = false;
        }
        if p < layout.num_lengthscales() {
            let width = if hi > lo { hi - lo } else { T::one() };
            let std = if var > T::zero() { var.sqrt() } else { T::one() };
            lower[p] = (T::lit(1e-2) * width).ln();
            upper[p] = (T::lit(1e2) * width).ln();
            theta[p] = std.ln().clamp(lower[p], upper[p]);
            spread[p] = T::lit(1.5);
        }
    }
    let means = data.outcome_means();
    let count = T::lit((data.len() * data.output_dim()) as f64);
    let mut yvar = data
        .outcomes()
        .iter()
        .flat_map(|y| y.iter().zip(&means).map(|(a, m)| (*a - *m) * (*a - *m)))
        .fold(T::zero(), |s, v| s + v)
        / count;
    if !(yvar > T::lit(1e-12)) {
        yvar = T::one();
    }
    let floor = T::lit(noise_floor.max(1e-300));
    let si = layout.signal_index();
    theta[si] = yvar.ln();
    lower[si] = (T::lit(1e-4) * yvar).ln();
    upper[si] = (T::lit(1e2) * yvar).ln();
    spread[si] = T::one();
    let ni = layout.noise_index();
    upper[ni] = (T::lit(10.0) * yvar).max(T::lit(10.0) * floor).ln();
    lower[ni] = floor.ln();
    theta[ni] = (T::lit(1e-2) * yvar).max(floor).ln().clamp(lower[ni], upper[ni]);
    spread[ni] = T::lit(3.0);
    for q in layout.coupling_offset()..layout.len() {
        theta[q] = T::lit(0.1);
        lower[q] = T::lit(-3.0);
        upper[q] = T::lit(3.0);
        spread[q] = T::lit(1.5);
    }
    Ok(Heuristic {
        theta,
        bounds: Bounds::new(lower, upper)?,
        spread,
        degenerate,
    })
}

/// Maximizes the log marginal likelihood over kernel hyperparameters with
/// `options.restarts` projected quasi-Newton ascents in log-parameter space.
///
/// The first ascent starts at the heuristic (lengthscales = input standard
/// deviations, signal variance = outcome variance, noise = 1% of it); a warm
/// start, when given, is the second. Remaining starts are random
/// perturbations of the heuristic drawn from `seed`, so a run with more
/// restarts explores a superset of the starts of a run with fewer.
pub fn fit_hyperparameters<T: Real>(
    data: &Dataset<T>,
    options: &FitOptions,
    seed: u64,
    warm_start: Option<&[T]>,
) -> Result<HyperFit<T>> {
    if data.len() < 2 {
        return Err(Error::invalid("hyperparameter fitting needs at least two observations"));
    }
    let layout = HyperLayout::new(options.family, data.input_dim(), data.output_dim(), options.coupling);
    let h = heuristic(data, &layout, options.noise_floor)?;
    let init_kernel = layout.kernel(&h.theta)?;
    let initial = layout.lml_with_gradient(data, &h.theta).map(|(v, _)| v);
    if h.degenerate {
        warn!("all inputs identical; returning heuristic hyperparameters");
        let lml = initial.unwrap_or(T::lit(f64::NEG_INFINITY));
        return Ok(HyperFit {
            kernel: init_kernel,
            theta: h.theta,
            log_likelihood: lml,
            initial_log_likelihood: lml,
            degenerate: true,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![h.theta.clone()];
    if let Some(w) = warm_start.filter(|w| w.len() == layout.len()) {
        let mut w = w.to_vec();
        h.bounds.project(&mut w);
        starts.push(w);
    }
    while starts.len() < options.restarts {
        let mut t: Vec<T> = h
            .theta
            .iter()
            .zip(&h.spread)
            .map(|(c, s)| *c + *s * T::lit(rng.random_range(-1.0..1.0)))
            .collect();
        h.bounds.project(&mut t);
        starts.push(t);
    }

    let objective = |theta: &[T]| match layout.lml_with_gradient(data, theta) {
        Ok((v, g)) => (v, g),
        Err(_) => (T::lit(f64::NEG_INFINITY), vec![T::zero(); theta.len()]),
    };
    let mut best: Option<(Vec<T>, T)> = None;
    for start in &starts {
        let r = maximize_box(objective, start, &h.bounds, &options.optimizer);
        if r.value.is_finite() && best.as_ref().is_none_or(|b| r.value > b.1) {
            best = Some((r.x, r.value));
        }
    }
    let (theta, lml) = best.ok_or(Error::NotPositiveDefinite {
        context: "hyperparameter fitting",
        jitter: crate::linalg::JITTER_SCHEDULE[crate::linalg::JITTER_SCHEDULE.len() - 1],
    })?;
    Ok(HyperFit {
        kernel: layout.kernel(&theta)?,
        theta,
        log_likelihood: lml,
        initial_log_likelihood: initial.unwrap_or(T::lit(f64::NEG_INFINITY)),
        degenerate: false,
    })
}

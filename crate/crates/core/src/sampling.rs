//! Posterior function draws.
//!
//! [`draw_path`] builds a decoupled sample: a random-Fourier-feature draw
//! from the prior plus a data-dependent correction (Matheron's rule),
//!
//! ```text
//! g(x) = m + f̃(x) + k(x, X) (K + σ²I)⁻¹ (y − m − f̃(X) − ε),   ε ~ N(0, σ²I)
//! ```
//!
//! which is deterministic, cheap to evaluate anywhere and differentiable.
//! [`exact_joint_sample`] draws from the exact joint posterior over a finite
//! candidate set and is the only option for the non-stationary tanimoto
//! kernel.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::gp::{FittedGp, KernelFamily, KernelSpec};
use crate::linalg::Factor;
use crate::{Error, Real, Result};

/// Default number of random features per path.
pub const DEFAULT_FEATURES: usize = 1024;

/// A deterministic function of the input producing one outcome vector, such
/// as a posterior path sample.
pub trait FunctionSample<T: Real> {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    fn eval(&self, x: &[T]) -> Result<Vec<T>>;

    /// Value and `n × d` Jacobian.
    fn eval_with_jacobian(&self, x: &[T]) -> Result<(Vec<T>, DMatrix<T>)>;
}

fn standard_normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z)
}

/// Random Fourier features `φ_i(x) = scale · cos(ω_i · x + b_i)` whose inner
/// products approximate a stationary kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T: Real> {
    frequencies: DMatrix<T>,
    phases: Vec<T>,
    scale: T,
}

impl<T: Real> FeatureMap<T> {
    pub fn from_parts(frequencies: DMatrix<T>, phases: Vec<T>, scale: T) -> Result<Self> {
        if frequencies.nrows() != phases.len() {
            return Err(Error::DimensionMismatch {
                what: "feature phases",
                expected: frequencies.nrows(),
                got: phases.len(),
            });
        }
        if frequencies.nrows() == 0 {
            return Err(Error::invalid("feature map needs at least one feature"));
        }
        Ok(Self {
            frequencies,
            phases,
            scale,
        })
    }

    /// Draws `m` features from the spectral measure of `kernel`: Gaussian for
    /// squared-exponential, multivariate-t with 5 degrees of freedom for
    /// Matérn-5/2. The scale is `√(2 σ_f² / m)`.
    pub fn sample<R: Rng + ?Sized>(kernel: &KernelSpec<T>, m: usize, rng: &mut R) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("number of features must be positive"));
        }
        let ls = kernel.lengthscales();
        let d = ls.len();
        let chi = ChiSquared::new(5.0).expect("valid degrees of freedom");
        let mut frequencies = DMatrix::zeros(m, d);
        for i in 0..m {
            let stretch = match kernel.family() {
                KernelFamily::SquaredExponential => 1.0,
                KernelFamily::Matern52 => (5.0f64 / chi.sample(rng)).sqrt(),
                KernelFamily::Tanimoto => {
                    return Err(Error::Unsupported(
                        "the tanimoto kernel has no spectral representation; use exact_joint_sample".into(),
                    ))
                }
            };
            for p in 0..d {
                frequencies[(i, p)] = standard_normal::<T, _>(rng) * T::lit(stretch) / ls[p];
            }
        }
        let phases = (0..m).map(|_| T::lit(rng.random::<f64>() * std::f64::consts::TAU)).collect();
        let scale = (T::lit(2.0) * kernel.signal_variance() / T::lit(m as f64)).sqrt();
        Ok(Self {
            frequencies,
            phases,
            scale,
        })
    }

    pub fn num_features(&self) -> usize {
        self.phases.len()
    }

    pub fn input_dim(&self) -> usize {
        self.frequencies.ncols()
    }

    pub fn frequencies(&self) -> &DMatrix<T> {
        &self.frequencies
    }

    pub fn phases(&self) -> &[T] {
        &self.phases
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    fn arguments(&self, x: &[T]) -> impl Iterator<Item = T> + '_ {
        let x: Vec<T> = x.to_vec();
        (0..self.num_features()).map(move |i| {
            let mut a = self.phases[i];
            for (p, xp) in x.iter().enumerate() {
                a += self.frequencies[(i, p)] * *xp;
            }
            a
        })
    }

    pub fn features(&self, x: &[T]) -> DVector<T> {
        DVector::from_iterator(self.num_features(), self.arguments(x).map(|a| self.scale * a.cos()))
    }

    /// Features and their `m × d` Jacobian.
    pub fn features_with_jacobian(&self, x: &[T]) -> (DVector<T>, DMatrix<T>) {
        let m = self.num_features();
        let d = self.input_dim();
        let mut phi = DVector::zeros(m);
        let mut jac = DMatrix::zeros(m, d);
        for (i, a) in self.arguments(x).enumerate() {
            let (s, c) = a.sin_cos();
            phi[i] = self.scale * c;
            for p in 0..d {
                jac[(i, p)] = -self.scale * s * self.frequencies[(i, p)];
            }
        }
        (phi, jac)
    }
}

/// Decoupled posterior function sample `g ~ f | D`.
#[derive(Clone, Debug)]
pub struct PathSample<T: Real> {
    features: FeatureMap<T>,
    /// `m × n`, one independent standard-normal weight vector per column.
    prior_weights: DMatrix<T>,
    /// Lower factor of the task coupling; mixes the columns into outputs.
    mixing: DMatrix<T>,
    kernel: KernelSpec<T>,
    train_inputs: Vec<Vec<T>>,
    prior_mean: Vec<T>,
    /// Pathwise-update dual variables, `N × n`.
    correction: DMatrix<T>,
    /// `correction · C`, row `i` holds `Σ_j' C[j, j'] c[i, j']`.
    mixed_correction: DMatrix<T>,
}

impl<T: Real> PathSample<T> {
    /// Assembles a path from explicit parts. `correction` is `N × n` over
    /// `train_inputs`.
    pub fn from_parts(
        kernel: KernelSpec<T>,
        features: FeatureMap<T>,
        prior_weights: DMatrix<T>,
        prior_mean: Vec<T>,
        train_inputs: Vec<Vec<T>>,
        correction: DMatrix<T>,
    ) -> Result<Self> {
        let n = kernel.output_dim();
        if !kernel.family().is_stationary() {
            return Err(Error::Unsupported("path samples need a stationary kernel".into()));
        }
        if prior_weights.nrows() != features.num_features() || prior_weights.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "prior weights",
                expected: features.num_features() * n,
                got: prior_weights.nrows() * prior_weights.ncols(),
            });
        }
        if features.input_dim() != kernel.lengthscales().len() {
            return Err(Error::DimensionMismatch {
                what: "feature frequencies",
                expected: kernel.lengthscales().len(),
                got: features.input_dim(),
            });
        }
        if prior_mean.len() != n || correction.ncols() != n || correction.nrows() != train_inputs.len() {
            return Err(Error::invalid("path parts disagree on output or training dimensions"));
        }
        let mixing = Factor::new(kernel.task_coupling().clone(), "task coupling")?.l();
        let mixed_correction = &correction * kernel.task_coupling();
        Ok(Self {
            features,
            prior_weights,
            mixing,
            kernel,
            train_inputs,
            prior_mean,
            correction,
            mixed_correction,
        })
    }

    pub fn feature_map(&self) -> &FeatureMap<T> {
        &self.features
    }

    pub fn prior_weights(&self) -> &DMatrix<T> {
        &self.prior_weights
    }

    pub fn mixing(&self) -> &DMatrix<T> {
        &self.mixing
    }

    pub fn correction_coeffs(&self) -> &DMatrix<T> {
        &self.correction
    }

    pub fn kernel(&self) -> &KernelSpec<T> {
        &self.kernel
    }

    pub fn train_inputs(&self) -> &[Vec<T>] {
        &self.train_inputs
    }

    pub fn prior_mean(&self) -> &[T] {
        &self.prior_mean
    }

    /// Prior draw `f̃(x)` without the mean.
    pub fn prior_value(&self, x: &[T]) -> Vec<T> {
        let z = self.prior_weights.tr_mul(&self.features.features(x));
        (&self.mixing * z).iter().copied().collect()
    }

    fn check(&self, x: &[T]) -> Result<()> {
        if x.len() != self.features.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "path input",
                expected: self.features.input_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("path input"));
        }
        Ok(())
    }
}

impl<T: Real> FunctionSample<T> for PathSample<T> {
    fn input_dim(&self) -> usize {
        self.features.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.prior_mean.len()
    }

    fn eval(&self, x: &[T]) -> Result<Vec<T>> {
        self.check(x)?;
        let mut out = self.prior_value(x);
        let sv = self.kernel.signal_variance();
        for (i, xi) in self.train_inputs.iter().enumerate() {
            let k = sv * self.kernel.input_correlation(x, xi);
            for (j, o) in out.iter_mut().enumerate() {
                *o += k * self.mixed_correction[(i, j)];
            }
        }
        for (o, m) in out.iter_mut().zip(&self.prior_mean) {
            *o += *m;
        }
        Ok(out)
    }

    fn eval_with_jacobian(&self, x: &[T]) -> Result<(Vec<T>, DMatrix<T>)> {
        self.check(x)?;
        let d = self.input_dim();
        let (phi, dphi) = self.features.features_with_jacobian(x);
        let z = self.prior_weights.tr_mul(&phi);
        let mut value: Vec<T> = (&self.mixing * z).iter().copied().collect();
        let mut jac = &self.mixing * self.prior_weights.tr_mul(&dphi);
        let sv = self.kernel.signal_variance();
        let mut grad = vec![T::zero(); d];
        for (i, xi) in self.train_inputs.iter().enumerate() {
            let k = sv * self.kernel.input_correlation_grad(x, xi, &mut grad)?;
            for j in 0..value.len() {
                let c = self.mixed_correction[(i, j)];
                value[j] += k * c;
                for p in 0..d {
                    jac[(j, p)] += sv * grad[p] * c;
                }
            }
        }
        for (o, m) in value.iter_mut().zip(&self.prior_mean) {
            *o += *m;
        }
        Ok((value, jac))
    }
}

/// Draws a decoupled posterior path with `m` random features.
pub fn draw_path<T: Real>(gp: &FittedGp<T>, m: usize, seed: u64) -> Result<PathSample<T>> {
    let kernel = gp.kernel();
    if !kernel.family().is_stationary() {
        return Err(Error::Unsupported(
            "pathwise sampling needs a stationary kernel; use exact_joint_sample for tanimoto".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = gp.output_dim();
    let features = FeatureMap::sample(kernel, m, &mut rng)?;
    let prior_weights = DMatrix::from_fn(m, n, |_, _| standard_normal::<T, _>(&mut rng));
    let noise_sd = kernel.noise_variance().sqrt();

    let mixing = Factor::new(kernel.task_coupling().clone(), "task coupling")?.l();
    let big_n = gp.train_inputs().len();
    let mut residual = DVector::zeros(big_n * n);
    for (i, xi) in gp.train_inputs().iter().enumerate() {
        let z = prior_weights.tr_mul(&features.features(xi));
        let prior = &mixing * z;
        for j in 0..n {
            let eps = noise_sd * standard_normal::<T, _>(&mut rng);
            residual[i * n + j] = prior[j] + eps;
        }
    }
    // K⁻¹(y − m − f̃(X) − ε) = dual − K⁻¹(f̃(X) + ε)
    let update = gp.dual_coeffs() - gp.factor().solve(&residual);
    let correction = DMatrix::from_fn(big_n, n, |i, j| update[i * n + j]);
    PathSample::from_parts(
        kernel.clone(),
        features,
        prior_weights,
        gp.prior_mean().to_vec(),
        gp.train_inputs().to_vec(),
        correction,
    )
}

/// Evaluates a path sample at `x`; bit-identical for equal inputs.
pub fn eval_path<T: Real>(path: &PathSample<T>, x: &[T]) -> Result<Vec<T>> {
    path.eval(x)
}

/// Analytic `n × d` Jacobian of a path sample.
pub fn eval_path_gradient<T: Real>(path: &PathSample<T>, x: &[T]) -> Result<DMatrix<T>> {
    path.eval_with_jacobian(x).map(|(_, j)| j)
}

/// One draw from the exact joint posterior over `candidates × outputs`;
/// row `c` of the result is the sampled outcome at candidate `c`. Exact
/// duplicate candidates receive identical values.
pub fn exact_joint_sample<T: Real>(gp: &FittedGp<T>, candidates: &[Vec<T>], seed: u64) -> Result<DMatrix<T>> {
    let n = gp.output_dim();
    let mut unique: Vec<Vec<T>> = Vec::new();
    let mut slot = Vec::with_capacity(candidates.len());
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for c in candidates {
        let key: Vec<u64> = c.iter().map(|v| v.as_f64().to_bits()).collect();
        let idx = *seen.entry(key).or_insert_with(|| {
            unique.push(c.clone());
            unique.len() - 1
        });
        slot.push(idx);
    }
    let (mean, cov) = gp.joint_posterior(&unique)?;
    let factor = Factor::new(cov, "joint posterior covariance")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_fn(unique.len() * n, |_, _| standard_normal::<T, _>(&mut rng));
    let draw = mean + factor.correlate(&z);
    Ok(DMatrix::from_fn(candidates.len(), n, |c, j| draw[slot[c] * n + j]))
}

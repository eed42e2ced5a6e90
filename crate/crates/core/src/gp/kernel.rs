use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::dot;
use crate::{Error, Real, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    /// Squared-exponential with one lengthscale per input dimension.
    SquaredExponential,
    /// Matérn-5/2 with one lengthscale per input dimension.
    #[default]
    Matern52,
    /// Tanimoto (Jaccard) similarity for binary fingerprints; no lengthscales.
    Tanimoto,
}

impl KernelFamily {
    pub fn is_stationary(self) -> bool {
        !matches!(self, KernelFamily::Tanimoto)
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "squared-exponential",
            KernelFamily::Matern52 => "matern52",
            KernelFamily::Tanimoto => "tanimoto",
        }
    }
}

/// Kernel over the extended space of (input, output index) pairs:
/// `k((x, j), (x', j')) = signal_variance · k_x(x, x') · task_coupling[j, j']`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec<T: Real> {
    family: KernelFamily,
    lengthscales: Vec<T>,
    signal_variance: T,
    noise_variance: T,
    task_coupling: DMatrix<T>,
}

impl<T: Real> KernelSpec<T> {
    pub fn new(
        family: KernelFamily,
        lengthscales: Vec<T>,
        signal_variance: T,
        noise_variance: T,
        task_coupling: DMatrix<T>,
    ) -> Result<Self> {
        if family.is_stationary() {
            if lengthscales.is_empty() {
                return Err(Error::invalid("stationary kernels need at least one lengthscale"));
            }
            if lengthscales.iter().any(|l| !(l.is_finite() && *l > T::zero())) {
                return Err(Error::invalid("lengthscales must be positive and finite"));
            }
        } else if !lengthscales.is_empty() {
            return Err(Error::invalid("the tanimoto kernel takes no lengthscales"));
        }
        if !(signal_variance.is_finite() && signal_variance > T::zero()) {
            return Err(Error::invalid("signal_variance must be positive"));
        }
        if !(noise_variance.is_finite() && noise_variance >= T::zero()) {
            return Err(Error::invalid("noise_variance must be non-negative"));
        }
        validate_coupling(&task_coupling)?;
        Ok(Self {
            family,
            lengthscales,
            signal_variance,
            noise_variance,
            task_coupling,
        })
    }

    /// Stationary kernel with independent outputs.
    pub fn stationary(
        family: KernelFamily,
        lengthscales: Vec<T>,
        signal_variance: T,
        noise_variance: T,
        outputs: usize,
    ) -> Result<Self> {
        Self::new(
            family,
            lengthscales,
            signal_variance,
            noise_variance,
            DMatrix::identity(outputs, outputs),
        )
    }

    /// Tanimoto kernel with independent outputs.
    pub fn tanimoto(signal_variance: T, noise_variance: T, outputs: usize) -> Result<Self> {
        Self::new(
            KernelFamily::Tanimoto,
            Vec::new(),
            signal_variance,
            noise_variance,
            DMatrix::identity(outputs, outputs),
        )
    }

    pub fn with_coupling(mut self, coupling: DMatrix<T>) -> Result<Self> {
        validate_coupling(&coupling)?;
        if coupling.nrows() != self.task_coupling.nrows() {
            return Err(Error::DimensionMismatch {
                what: "task_coupling",
                expected: self.task_coupling.nrows(),
                got: coupling.nrows(),
            });
        }
        self.task_coupling = coupling;
        Ok(self)
    }

    pub fn with_noise_variance(mut self, noise_variance: T) -> Result<Self> {
        if !(noise_variance.is_finite() && noise_variance >= T::zero()) {
            return Err(Error::invalid("noise_variance must be non-negative"));
        }
        self.noise_variance = noise_variance;
        Ok(self)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn lengthscales(&self) -> &[T] {
        &self.lengthscales
    }

    pub fn signal_variance(&self) -> T {
        self.signal_variance
    }

    pub fn noise_variance(&self) -> T {
        self.noise_variance
    }

    pub fn task_coupling(&self) -> &DMatrix<T> {
        &self.task_coupling
    }

    pub fn output_dim(&self) -> usize {
        self.task_coupling.nrows()
    }

    /// Input dimension fixed by the lengthscales; `None` for tanimoto.
    pub fn input_dim(&self) -> Option<usize> {
        self.family.is_stationary().then_some(self.lengthscales.len())
    }

    /// Scaled distance `r = ‖(a − b) / ℓ‖` for stationary families.
    fn scaled_distance_sq(&self, a: &[T], b: &[T]) -> T {
        a.iter()
            .zip(b)
            .zip(&self.lengthscales)
            .fold(T::zero(), |s, ((x, y), l)| {
                let u = (*x - *y) / *l;
                s + u * u
            })
    }

    /// Input part `k_x(a, b)` without the signal variance; equals 1 at `a = b`.
    pub fn input_correlation(&self, a: &[T], b: &[T]) -> T {
        match self.family {
            KernelFamily::SquaredExponential => (-T::lit(0.5) * self.scaled_distance_sq(a, b)).exp(),
            KernelFamily::Matern52 => {
                let r2 = self.scaled_distance_sq(a, b);
                let sr = T::lit(SQRT5) * r2.sqrt();
                (T::one() + sr + T::lit(5.0 / 3.0) * r2) * (-sr).exp()
            }
            KernelFamily::Tanimoto => tanimoto(a, b),
        }
    }

    /// Gradient of [`input_correlation`](Self::input_correlation) with respect
    /// to its first argument, written into `out`.
    pub fn input_correlation_grad(&self, a: &[T], b: &[T], out: &mut [T]) -> Result<T> {
        let r2 = self.scaled_distance_sq(a, b);
        let (value, coef) = match self.family {
            KernelFamily::SquaredExponential => {
                let k = (-T::lit(0.5) * r2).exp();
                (k, -k)
            }
            KernelFamily::Matern52 => {
                let sr = T::lit(SQRT5) * r2.sqrt();
                let e = (-sr).exp();
                let k = (T::one() + sr + T::lit(5.0 / 3.0) * r2) * e;
                (k, -T::lit(5.0 / 3.0) * (T::one() + sr) * e)
            }
            KernelFamily::Tanimoto => {
                return Err(Error::Unsupported(
                    "the tanimoto kernel has no input gradient".into(),
                ))
            }
        };
        for (((o, x), y), l) in out.iter_mut().zip(a).zip(b).zip(&self.lengthscales) {
            *o = coef * (*x - *y) / (*l * *l);
        }
        Ok(value)
    }

    /// Full extended-space kernel value.
    pub fn eval(&self, a: (&[T], usize), b: (&[T], usize)) -> T {
        self.signal_variance * self.input_correlation(a.0, b.0) * self.task_coupling[(a.1, b.1)]
    }
}

/// `⟨a,b⟩ / (‖a‖² + ‖b‖² − ⟨a,b⟩)`, with two all-zero vectors defined as
/// identical (similarity 1).
pub fn tanimoto<T: Real>(a: &[T], b: &[T]) -> T {
    let ab = dot(a, b);
    let denom = dot(a, a) + dot(b, b) - ab;
    if denom <= T::zero() {
        T::one()
    } else {
        ab / denom
    }
}

/// Extended-space kernel value; see [`KernelSpec::eval`].
pub fn kernel_eval<T: Real>(spec: &KernelSpec<T>, a: (&[T], usize), b: (&[T], usize)) -> T {
    spec.eval(a, b)
}

fn validate_coupling<T: Real>(c: &DMatrix<T>) -> Result<()> {
    if c.nrows() == 0 || !c.is_square() {
        return Err(Error::invalid("task_coupling must be a non-empty square matrix"));
    }
    let tol = T::lit(1e-9);
    for i in 0..c.nrows() {
        if (c[(i, i)] - T::one()).abs() > tol {
            return Err(Error::invalid("task_coupling must have a unit diagonal"));
        }
        for j in 0..i {
            if (c[(i, j)] - c[(j, i)]).abs() > tol {
                return Err(Error::invalid("task_coupling must be symmetric"));
            }
        }
    }
    if c.nrows() > 1 {
        let min_eig = c
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(T::max_value().unwrap_or(T::lit(f64::MAX)), |m, v| m.min(*v));
        if min_eig < -tol {
            return Err(Error::invalid("task_coupling must be positive semidefinite"));
        }
    }
    Ok(())
}

/// Unit-diagonal rank-one-plus-diagonal coupling `v vᵀ + diag(1 − v²)`.
pub fn rank_one_coupling<T: Real>(v: &[T]) -> DMatrix<T> {
    let n = v.len();
    DMatrix::from_fn(n, n, |i, j| if i == j { T::one() } else { v[i] * v[j] })
}

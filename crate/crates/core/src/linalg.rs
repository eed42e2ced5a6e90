//! Cholesky factorization with jitter escalation and small dense helpers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Real, Result};

/// Jitter levels tried after a plain factorization fails, relative to the
/// mean diagonal magnitude.
pub const JITTER_SCHEDULE: [f64; 5] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Lower-triangular factor of a symmetric positive-definite matrix together
/// with the diagonal jitter that was needed to obtain it.
#[derive(Clone, Debug)]
pub struct Factor<T: Real> {
    chol: Cholesky<T, Dyn>,
    jitter: T,
}

impl<T: Real> Factor<T> {
    /// Factorizes `a`, retrying with growing diagonal jitter.
    pub fn new(a: DMatrix<T>, context: &'static str) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                what: context,
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(context));
        }
        if let Some(chol) = Cholesky::new(a.clone()) {
            return Ok(Self {
                chol,
                jitter: T::zero(),
            });
        }
        let n = a.nrows();
        let mean_diag = if n == 0 {
            T::one()
        } else {
            a.diagonal().iter().map(|v| v.abs()).fold(T::zero(), |s, v| s + v) / T::lit(n as f64)
        };
        let base = if mean_diag > T::zero() { mean_diag } else { T::one() };
        for rel in JITTER_SCHEDULE {
            let jitter = base * T::lit(rel);
            let mut m = a.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(m) {
                return Ok(Self { chol, jitter });
            }
        }
        Err(Error::NotPositiveDefinite {
            context,
            jitter: (base * T::lit(JITTER_SCHEDULE[JITTER_SCHEDULE.len() - 1])).as_f64(),
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Jitter added to the diagonal (zero when none was needed).
    pub fn jitter(&self) -> T {
        self.jitter
    }

    /// The lower-triangular factor `L` with `L Lᵀ = A + jitter·I`.
    pub fn l(&self) -> DMatrix<T> {
        self.chol.l()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<T>) -> DMatrix<T> {
        self.chol.solve(b)
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &DVector<T>) -> DVector<T> {
        let mut x = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut x);
        x
    }

    pub fn solve_lower_matrix(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let mut x = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut x);
        x
    }

    /// `Σ log L_ii`, i.e. half the log-determinant.
    pub fn half_log_det(&self) -> T {
        self.chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold(T::zero(), |s, v| s + v.ln())
    }

    /// `A⁻¹` computed as `L⁻ᵀ L⁻¹`.
    pub fn inverse(&self) -> DMatrix<T> {
        let n = self.dim();
        let linv = self.solve_lower_matrix(&DMatrix::identity(n, n));
        linv.transpose() * linv
    }

    /// `L z` for a standard-normal vector `z`, i.e. a draw with covariance `A`.
    pub fn correlate(&self, z: &DVector<T>) -> DVector<T> {
        self.chol.l() * z
    }
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y)
}

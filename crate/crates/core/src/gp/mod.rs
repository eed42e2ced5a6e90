//! Latent-input multi-output Gaussian process: a scalar GP over
//! (input, output index) pairs with closed-form posterior mean and covariance.

mod fit;
mod kernel;
mod posterior;

pub use fit::{fit_hyperparameters, Coupling, FitOptions, HyperFit, HyperLayout};
pub use kernel::{kernel_eval, rank_one_coupling, tanimoto, KernelFamily, KernelSpec};
pub use posterior::{
    fit_posterior, log_marginal_likelihood, FittedGp, PriorMean, VARIANCE_FLOOR,
};

use crate::{Error, Real, Result};

/// Observed `(input, noisy outcome)` pairs in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    input_dim: usize,
    output_dim: usize,
    inputs: Vec<Vec<T>>,
    outcomes: Vec<Vec<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            inputs: Vec::new(),
            outcomes: Vec::new(),
        }
    }

    pub fn from_rows(
        input_dim: usize,
        output_dim: usize,
        inputs: Vec<Vec<T>>,
        outcomes: Vec<Vec<T>>,
    ) -> Result<Self> {
        if inputs.len() != outcomes.len() {
            return Err(Error::DimensionMismatch {
                what: "dataset rows",
                expected: inputs.len(),
                got: outcomes.len(),
            });
        }
        let mut data = Self::new(input_dim, output_dim);
        for (x, y) in inputs.into_iter().zip(outcomes) {
            data.push(x, y)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, x: Vec<T>, y: Vec<T>) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "dataset input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if y.len() != self.output_dim {
            return Err(Error::DimensionMismatch {
                what: "dataset outcome",
                expected: self.output_dim,
                got: y.len(),
            });
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset entry"));
        }
        self.inputs.push(x);
        self.outcomes.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn inputs(&self) -> &[Vec<T>] {
        &self.inputs
    }

    pub fn outcomes(&self) -> &[Vec<T>] {
        &self.outcomes
    }

    /// Per-output sample mean of the outcomes.
    pub fn outcome_means(&self) -> Vec<T> {
        let n = T::lit(self.len().max(1) as f64);
        (0..self.output_dim)
            .map(|j| self.outcomes.iter().fold(T::zero(), |s, y| s + y[j]) / n)
            .collect()
    }
}

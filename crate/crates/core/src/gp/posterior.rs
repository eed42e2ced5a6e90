use nalgebra::{DMatrix, DVector};

use super::{Dataset, KernelSpec};
use crate::linalg::Factor;
use crate::{Error, Real, Result};

/// Posterior variances are clamped to at least this value.
pub const VARIANCE_FLOOR: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Constant prior mean per output.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum PriorMean<T> {
    /// Per-output sample mean of the observed outcomes.
    #[default]
    Empirical,
    Constant(Vec<T>),
}

/// Extended-space Gram matrix over `inputs × outputs`, row/column index
/// `i * n + j`. Noise is added to the diagonal when `with_noise` is set.
pub(crate) fn extended_gram<T: Real>(kernel: &KernelSpec<T>, inputs: &[Vec<T>], with_noise: bool) -> DMatrix<T> {
    let n = kernel.output_dim();
    let big = inputs.len() * n;
    let sv = kernel.signal_variance();
    let c = kernel.task_coupling();
    let mut k = DMatrix::zeros(big, big);
    for i in 0..inputs.len() {
        for i2 in 0..=i {
            let kx = sv * kernel.input_correlation(&inputs[i], &inputs[i2]);
            for j in 0..n {
                for j2 in 0..n {
                    let v = kx * c[(j, j2)];
                    k[(i * n + j, i2 * n + j2)] = v;
                    k[(i2 * n + j2, i * n + j)] = v;
                }
            }
        }
    }
    if with_noise {
        for e in 0..big {
            k[(e, e)] += kernel.noise_variance();
        }
    }
    k
}

pub(crate) fn resolve_mean<T: Real>(data: &Dataset<T>, prior: &PriorMean<T>) -> Result<Vec<T>> {
    match prior {
        PriorMean::Empirical => Ok(data.outcome_means()),
        PriorMean::Constant(m) if m.len() == data.output_dim() => Ok(m.clone()),
        PriorMean::Constant(m) => Err(Error::DimensionMismatch {
            what: "prior mean",
            expected: data.output_dim(),
            got: m.len(),
        }),
    }
}

pub(crate) fn centered_targets<T: Real>(data: &Dataset<T>, mean: &[T]) -> DVector<T> {
    let n = data.output_dim();
    DVector::from_fn(data.len() * n, |e, _| data.outcomes()[e / n][e % n] - mean[e % n])
}

pub(crate) fn check_data<T: Real>(data: &Dataset<T>, kernel: &KernelSpec<T>) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if data.output_dim() != kernel.output_dim() {
        return Err(Error::DimensionMismatch {
            what: "kernel outputs",
            expected: data.output_dim(),
            got: kernel.output_dim(),
        });
    }
    if let Some(d) = kernel.input_dim() {
        if d != data.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "kernel lengthscales",
                expected: data.input_dim(),
                got: d,
            });
        }
    }
    Ok(())
}

/// Posterior of the extended-space GP conditioned on a [`Dataset`].
///
/// Immutable once built, so it can be shared across threads for prediction.
#[derive(Clone, Debug)]
pub struct FittedGp<T: Real> {
    kernel: KernelSpec<T>,
    train_inputs: Vec<Vec<T>>,
    input_dim: usize,
    prior_mean: Vec<T>,
    factor: Factor<T>,
    dual: DVector<T>,
    /// `Σ_j' C[j, j'] α[i, j']`, so that the mean of output `j` is a plain
    /// weighted sum of input correlations.
    mixed_dual: DMatrix<T>,
    log_likelihood: T,
}

impl<T: Real> FittedGp<T> {
    pub fn fit(data: &Dataset<T>, kernel: &KernelSpec<T>, prior: &PriorMean<T>) -> Result<Self> {
        check_data(data, kernel)?;
        let n = kernel.output_dim();
        let mean = resolve_mean(data, prior)?;
        let gram = extended_gram(kernel, data.inputs(), true);
        let factor = Factor::new(gram, "posterior Gram matrix")?;
        let targets = centered_targets(data, &mean);
        let dual = factor.solve(&targets);
        let c = kernel.task_coupling();
        let mixed_dual = DMatrix::from_fn(data.len(), n, |i, j| {
            (0..n).fold(T::zero(), |s, j2| s + c[(j, j2)] * dual[i * n + j2])
        });
        let big = T::lit((data.len() * n) as f64);
        let log_likelihood = -T::lit(0.5) * targets.dot(&dual) - factor.half_log_det() - T::lit(0.5 * LN_2PI) * big;
        Ok(Self {
            kernel: kernel.clone(),
            train_inputs: data.inputs().to_vec(),
            input_dim: data.input_dim(),
            prior_mean: mean,
            factor,
            dual,
            mixed_dual,
            log_likelihood,
        })
    }

    pub fn kernel(&self) -> &KernelSpec<T> {
        &self.kernel
    }

    pub fn train_inputs(&self) -> &[Vec<T>] {
        &self.train_inputs
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.kernel.output_dim()
    }

    pub fn prior_mean(&self) -> &[T] {
        &self.prior_mean
    }

    /// Factor of `K + σ²I` over the extended training set.
    pub fn factor(&self) -> &Factor<T> {
        &self.factor
    }

    /// `(K + σ²I)⁻¹ (y − m)` over the extended training set.
    pub fn dual_coeffs(&self) -> &DVector<T> {
        &self.dual
    }

    /// Log marginal likelihood of the training targets.
    pub fn log_likelihood(&self) -> T {
        self.log_likelihood
    }

    fn check(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "prediction input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prediction input"));
        }
        Ok(())
    }

    fn input_correlations(&self, x: &[T]) -> Vec<T> {
        self.train_inputs
            .iter()
            .map(|xi| self.kernel.input_correlation(x, xi))
            .collect()
    }

    /// Cross-covariance between `(x, j)` and every extended training point.
    fn cross(&self, kx: &[T], j: usize) -> DVector<T> {
        let n = self.output_dim();
        let sv = self.kernel.signal_variance();
        let c = self.kernel.task_coupling();
        DVector::from_fn(kx.len() * n, |e, _| sv * kx[e / n] * c[(j, e % n)])
    }

    fn mean_from(&self, kx: &[T]) -> Vec<T> {
        let sv = self.kernel.signal_variance();
        (0..self.output_dim())
            .map(|j| {
                let s = kx
                    .iter()
                    .enumerate()
                    .fold(T::zero(), |s, (i, k)| s + *k * self.mixed_dual[(i, j)]);
                self.prior_mean[j] + sv * s
            })
            .collect()
    }

    fn variance_from(&self, kx: &[T]) -> Vec<T> {
        let sv = self.kernel.signal_variance();
        let floor = T::lit(VARIANCE_FLOOR);
        (0..self.output_dim())
            .map(|j| {
                let v = self.factor.solve_lower(&self.cross(kx, j));
                (sv - v.norm_squared()).max(floor)
            })
            .collect()
    }

    /// Posterior mean of every output at `x`.
    pub fn posterior_mean(&self, x: &[T]) -> Result<Vec<T>> {
        self.check(x)?;
        Ok(self.mean_from(&self.input_correlations(x)))
    }

    /// Posterior variance of every output at `x`, floored at [`VARIANCE_FLOOR`].
    pub fn posterior_variance(&self, x: &[T]) -> Result<Vec<T>> {
        self.check(x)?;
        Ok(self.variance_from(&self.input_correlations(x)))
    }

    pub fn posterior_mean_variance(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        self.check(x)?;
        let kx = self.input_correlations(x);
        Ok((self.mean_from(&kx), self.variance_from(&kx)))
    }

    /// Posterior variances at `x` and their `n × d` Jacobian.
    pub fn posterior_variance_gradient(&self, x: &[T]) -> Result<(Vec<T>, DMatrix<T>)> {
        self.check(x)?;
        let d = self.input_dim;
        let n = self.output_dim();
        let sv = self.kernel.signal_variance();
        let c = self.kernel.task_coupling();
        let big_n = self.train_inputs.len();
        let mut kx = Vec::with_capacity(big_n);
        let mut dkx = DMatrix::zeros(big_n, d);
        let mut row = vec![T::zero(); d];
        for (i, xi) in self.train_inputs.iter().enumerate() {
            kx.push(self.kernel.input_correlation_grad(x, xi, &mut row)?);
            for p in 0..d {
                dkx[(i, p)] = row[p];
            }
        }
        let floor = T::lit(VARIANCE_FLOOR);
        let mut var = Vec::with_capacity(n);
        let mut jac = DMatrix::zeros(n, d);
        for j in 0..n {
            let cross = self.cross(&kx, j);
            let beta = self.factor.solve(&cross);
            let raw = sv - cross.dot(&beta);
            var.push(raw.max(floor));
            if raw <= floor {
                continue;
            }
            for p in 0..d {
                let mut s = T::zero();
                for i in 0..big_n {
                    for j2 in 0..n {
                        s += sv * c[(j, j2)] * dkx[(i, p)] * beta[i * n + j2];
                    }
                }
                jac[(j, p)] = -T::lit(2.0) * s;
            }
        }
        Ok((var, jac))
    }

    /// Joint posterior over `xs × outputs`, index `c * n + j`.
    pub fn joint_posterior(&self, xs: &[Vec<T>]) -> Result<(DVector<T>, DMatrix<T>)> {
        for x in xs {
            self.check(x)?;
        }
        let n = self.output_dim();
        let big = xs.len() * n;
        let prior_cov = extended_gram(&self.kernel, xs, false);
        let mut mean = DVector::zeros(big);
        let mut cross = DMatrix::zeros(self.train_inputs.len() * n, big);
        for (ci, x) in xs.iter().enumerate() {
            let kx = self.input_correlations(x);
            for (j, m) in self.mean_from(&kx).into_iter().enumerate() {
                mean[ci * n + j] = m;
            }
            for j in 0..n {
                cross.set_column(ci * n + j, &self.cross(&kx, j));
            }
        }
        let v = self.factor.solve_lower_matrix(&cross);
        let cov = prior_cov - v.transpose() * v;
        Ok((mean, cov))
    }
}

/// Posterior with the empirical per-output prior mean.
pub fn fit_posterior<T: Real>(data: &Dataset<T>, kernel: &KernelSpec<T>) -> Result<FittedGp<T>> {
    FittedGp::fit(data, kernel, &PriorMean::Empirical)
}

/// Exact Gaussian log marginal likelihood of the stacked, mean-centered
/// targets (empirical prior mean).
pub fn log_marginal_likelihood<T: Real>(data: &Dataset<T>, kernel: &KernelSpec<T>) -> Result<T> {
    Ok(fit_posterior(data, kernel)?.log_likelihood())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{rank_one_coupling, KernelFamily};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn se(ls: f64, sv: f64, nv: f64) -> KernelSpec<f64> {
        KernelSpec::stationary(KernelFamily::SquaredExponential, vec![ls], sv, nv, 1).unwrap()
    }

    #[test]
    fn single_point_shrinkage() {
        let data = Dataset::from_rows(1, 1, vec![vec![0.3]], vec![vec![2.0]]).unwrap();
        let k = se(1.0, 1.5, 0.5);
        let gp = FittedGp::fit(&data, &k, &PriorMean::Constant(vec![0.0])).unwrap();
        let mu = gp.posterior_mean(&[0.3]).unwrap()[0];
        assert_relative_eq!(mu, 2.0 * 1.5 / (1.5 + 0.5), epsilon = 1e-14);
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![(3.0 * x[0]).sin() + 4.0]).collect();
        let data = Dataset::from_rows(1, 1, xs, ys).unwrap();
        let k = se(0.5, 2.0, 1e-3);
        let gp = fit_posterior(&data, &k).unwrap();
        let far = [1.0 + 10.0 * 0.5];
        let (m, v) = gp.posterior_mean_variance(&far).unwrap();
        assert!((m[0] - gp.prior_mean()[0]).abs() < 1e-3 * 2.0);
        assert!((v[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn interpolates_without_noise() {
        let data = Dataset::from_rows(1, 1, vec![vec![0.0], vec![1.0]], vec![vec![1.0], vec![-1.0]]).unwrap();
        let gp = fit_posterior(&data, &se(0.7, 1.0, 0.0)).unwrap();
        assert!(gp.posterior_variance(&[0.0]).unwrap()[0] <= 1e-8);
        assert_relative_eq!(gp.posterior_mean(&[1.0]).unwrap()[0], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn single_observation_log_likelihood() {
        let data = Dataset::from_rows(1, 1, vec![vec![0.0]], vec![vec![0.0]]).unwrap();
        let lml = log_marginal_likelihood(&data, &se(1.0, 0.75, 0.25)).unwrap();
        assert_relative_eq!(lml, -0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-14);
    }

    #[test]
    fn log_likelihood_is_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random(), rng.random()]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0] - x[1], x[0] * x[1]]).collect();
        let k = KernelSpec::stationary(KernelFamily::Matern52, vec![0.4, 0.6], 1.0, 1e-2, 2)
            .unwrap()
            .with_coupling(rank_one_coupling(&[0.5, 0.4]))
            .unwrap();
        let a = log_marginal_likelihood(&Dataset::from_rows(2, 2, xs.clone(), ys.clone()).unwrap(), &k).unwrap();
        let mut idx: Vec<usize> = (0..12).collect();
        idx.reverse();
        idx.swap(2, 7);
        let xs2 = idx.iter().map(|&i| xs[i].clone()).collect();
        let ys2 = idx.iter().map(|&i| ys[i].clone()).collect();
        let b = log_marginal_likelihood(&Dataset::from_rows(2, 2, xs2, ys2).unwrap(), &k).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn identity_coupling_factorizes_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0].sin(), x[0] * x[0]]).collect();
        let k2 = KernelSpec::stationary(KernelFamily::Matern52, vec![0.8], 1.3, 1e-2, 2).unwrap();
        let joint = fit_posterior(&Dataset::from_rows(1, 2, xs.clone(), ys.clone()).unwrap(), &k2).unwrap();
        let k1 = KernelSpec::stationary(KernelFamily::Matern52, vec![0.8], 1.3, 1e-2, 1).unwrap();
        for j in 0..2 {
            let yj = ys.iter().map(|y| vec![y[j]]).collect();
            let single = fit_posterior(&Dataset::from_rows(1, 1, xs.clone(), yj).unwrap(), &k1).unwrap();
            for t in [-1.7, 0.1, 0.9, 3.0] {
                let (mj, vj) = joint.posterior_mean_variance(&[t]).unwrap();
                let (ms, vs) = single.posterior_mean_variance(&[t]).unwrap();
                assert!((mj[j] - ms[0]).abs() < 1e-10);
                assert!((vj[j] - vs[0]).abs() < 1e-10);
            }
        }
        // changing output 1's data leaves output 0's mean unchanged
        let ys_alt: Vec<Vec<f64>> = ys.iter().map(|y| vec![y[0], -5.0 * y[1]]).collect();
        let alt = fit_posterior(&Dataset::from_rows(1, 2, xs, ys_alt).unwrap(), &k2).unwrap();
        let a = joint.posterior_mean(&[0.3]).unwrap()[0];
        let b = alt.posterior_mean(&[0.3]).unwrap()[0];
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn variance_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let xs: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.random(), rng.random()]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0], x[1]]).collect();
        let k = KernelSpec::stationary(KernelFamily::Matern52, vec![0.3, 0.5], 1.0, 1e-3, 2)
            .unwrap()
            .with_coupling(rank_one_coupling(&[0.7, 0.6]))
            .unwrap();
        let gp = fit_posterior(&Dataset::from_rows(2, 2, xs, ys).unwrap(), &k).unwrap();
        let x = [0.41, 0.77];
        let (_, jac) = gp.posterior_variance_gradient(&x).unwrap();
        for p in 0..2 {
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[p] += h;
            xm[p] -= h;
            let vp = gp.posterior_variance(&xp).unwrap();
            let vm = gp.posterior_variance(&xm).unwrap();
            for j in 0..2 {
                assert_relative_eq!(jac[(j, p)], (vp[j] - vm[j]) / (2.0 * h), max_relative = 1e-5, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn joint_posterior_diagonal_matches_marginals() {
        let data = Dataset::from_rows(1, 1, vec![vec![0.0], vec![0.5]], vec![vec![1.0], vec![0.0]]).unwrap();
        let gp = fit_posterior(&data, &se(0.4, 1.0, 1e-2)).unwrap();
        let xs = vec![vec![0.2], vec![0.9], vec![-0.4]];
        let (mean, cov) = gp.joint_posterior(&xs).unwrap();
        for (c, x) in xs.iter().enumerate() {
            let (m, v) = gp.posterior_mean_variance(x).unwrap();
            assert_relative_eq!(mean[c], m[0], epsilon = 1e-12);
            assert_relative_eq!(cov[(c, c)], v[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_errors() {
        let data = Dataset::from_rows(1, 1, vec![vec![0.0]], vec![vec![1.0]]).unwrap();
        let gp = fit_posterior(&data, &se(1.0, 1.0, 0.1)).unwrap();
        assert!(gp.posterior_mean(&[0.0, 1.0]).is_err());
        let k2 = KernelSpec::stationary(KernelFamily::Matern52, vec![1.0, 1.0], 1.0, 0.1, 1).unwrap();
        assert!(fit_posterior(&data, &k2).is_err());
        assert!(fit_posterior(&Dataset::<f64>::new(1, 1), &se(1.0, 1.0, 0.1)).is_err());
    }
}

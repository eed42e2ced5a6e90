//! Numerical core against independent reference computations.

use approx::assert_relative_eq;
use beacon_core::acquisition::{acquisition_with_gradient, NoveltyConfig, ReferenceSet};
use beacon_core::behavior::BehaviorSpace;
use beacon_core::gp::{rank_one_coupling, Dataset, FittedGp, KernelFamily, KernelSpec, PriorMean};
use beacon_core::optimize::{minimize_box, Bounds, LbfgsOptions};
use beacon_core::sampling::{draw_path, eval_path, eval_path_gradient};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Input correlation written out from the textbook formulas.
fn corr(family: KernelFamily, a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    match family {
        KernelFamily::SquaredExponential => (-0.5 * r2).exp(),
        KernelFamily::Matern52 => {
            let r = r2.sqrt();
            let s5 = 5f64.sqrt();
            (1.0 + s5 * r + 5.0 * r2 / 3.0) * (-s5 * r).exp()
        }
        KernelFamily::Tanimoto => unreachable!(),
    }
}

struct Instance {
    family: KernelFamily,
    ls: Vec<f64>,
    sv: f64,
    noise: f64,
    coupling: DMatrix<f64>,
    xs: Vec<Vec<f64>>,
    ys: Vec<Vec<f64>>,
}

impl Instance {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let d = rng.random_range(1..=4);
        let n = rng.random_range(1..=3);
        let big_n = rng.random_range(1..=25);
        let family = if rng.random_bool(0.5) {
            KernelFamily::SquaredExponential
        } else {
            KernelFamily::Matern52
        };
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-0.9..0.9)).collect();
        let xs: Vec<Vec<f64>> = (0..big_n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let ys = (0..big_n).map(|_| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        Self {
            family,
            ls: (0..d).map(|_| rng.random_range(0.3..2.0)).collect(),
            sv: rng.random_range(0.5..3.0),
            noise: rng.random_range(0.01..0.5),
            coupling: rank_one_coupling(&v),
            xs,
            ys,
        }
    }

    fn n(&self) -> usize {
        self.ys[0].len()
    }

    fn kext(&self, a: &[f64], j: usize, b: &[f64], j2: usize) -> f64 {
        self.sv * corr(self.family, a, b, &self.ls) * self.coupling[(j, j2)]
    }

    fn gram(&self) -> DMatrix<f64> {
        let n = self.n();
        let big = self.xs.len() * n;
        DMatrix::from_fn(big, big, |r, c| {
            let k = self.kext(&self.xs[r / n], r % n, &self.xs[c / n], c % n);
            if r == c {
                k + self.noise
            } else {
                k
            }
        })
    }

    fn means(&self) -> Vec<f64> {
        (0..self.n())
            .map(|j| self.ys.iter().map(|y| y[j]).sum::<f64>() / self.ys.len() as f64)
            .collect()
    }

    fn fitted(&self) -> FittedGp<f64> {
        let data = Dataset::from_rows(self.ls.len(), self.n(), self.xs.clone(), self.ys.clone()).unwrap();
        let kernel = KernelSpec::new(self.family, self.ls.clone(), self.sv, self.noise, self.coupling.clone()).unwrap();
        FittedGp::fit(&data, &kernel, &PriorMean::Empirical).unwrap()
    }

    /// Mean, variance and log marginal likelihood by LU solves.
    fn oracle(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let n = self.n();
        let m = self.means();
        let k = self.gram();
        let lu = k.clone().lu();
        let y = DVector::from_fn(self.xs.len() * n, |e, _| self.ys[e / n][e % n] - m[e % n]);
        let alpha = lu.solve(&y).unwrap();
        let lml = -0.5 * y.dot(&alpha)
            - 0.5 * lu.determinant().ln()
            - 0.5 * (self.xs.len() * n) as f64 * (2.0 * std::f64::consts::PI).ln();
        let mut mean = Vec::new();
        let mut var = Vec::new();
        for j in 0..n {
            let kx = DVector::from_fn(self.xs.len() * n, |e, _| self.kext(x, j, &self.xs[e / n], e % n));
            mean.push(m[j] + kx.dot(&alpha));
            var.push(self.kext(x, j, x, j) - kx.dot(&lu.solve(&kx).unwrap()));
        }
        (mean, var, lml)
    }
}

#[test]
fn posterior_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let inst = Instance::random(&mut rng);
        let gp = inst.fitted();
        let (_, _, lml) = inst.oracle(&inst.xs[0]);
        assert_relative_eq!(gp.log_likelihood(), lml, epsilon = 1e-8, max_relative = 1e-10);
        for _ in 0..5 {
            let x: Vec<f64> = (0..inst.ls.len()).map(|_| rng.random_range(-2.5..2.5)).collect();
            let (mean, var, _) = inst.oracle(&x);
            let (m, v) = gp.posterior_mean_variance(&x).unwrap();
            for j in 0..inst.n() {
                assert!((m[j] - mean[j]).abs() < 1e-8, "mean {} vs {}", m[j], mean[j]);
                assert!((v[j] - var[j].max(1e-12)).abs() < 1e-8, "var {} vs {}", v[j], var[j]);
            }
        }
    }
}

#[test]
fn joint_posterior_agrees_with_marginals() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inst = Instance::random(&mut rng);
    let gp = inst.fitted();
    let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..inst.ls.len()).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let (mean, cov) = gp.joint_posterior(&xs).unwrap();
    let n = inst.n();
    for (c, x) in xs.iter().enumerate() {
        let (m, v, _) = inst.oracle(x);
        for j in 0..n {
            assert_relative_eq!(mean[c * n + j], m[j], epsilon = 1e-9);
            assert_relative_eq!(cov[(c * n + j, c * n + j)], v[j], epsilon = 1e-9);
        }
    }
}

#[test]
fn single_precision_tracks_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inst = Instance::random(&mut rng);
    let gp = inst.fitted();
    let to32 = |v: &Vec<f64>| v.iter().map(|a| *a as f32).collect::<Vec<f32>>();
    let data = Dataset::from_rows(
        inst.ls.len(),
        inst.n(),
        inst.xs.iter().map(to32).collect(),
        inst.ys.iter().map(to32).collect(),
    )
    .unwrap();
    let kernel = KernelSpec::<f32>::new(
        inst.family,
        to32(&inst.ls),
        inst.sv as f32,
        inst.noise as f32,
        inst.coupling.map(|v| v as f32),
    )
    .unwrap();
    let gp32 = FittedGp::fit(&data, &kernel, &PriorMean::Empirical).unwrap();
    let x = vec![0.3; inst.ls.len()];
    let m64 = gp.posterior_mean(&x).unwrap();
    let m32 = gp32.posterior_mean(&to32(&x)).unwrap();
    for (a, b) in m64.iter().zip(&m32) {
        assert!((a - *b as f64).abs() < 1e-2 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|p| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[p] += h;
            b[p] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn path_and_acquisition_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..10 {
        let inst = Instance::random(&mut rng);
        let gp = inst.fitted();
        let path = draw_path(&gp, 512, trial).unwrap();
        let d = inst.ls.len();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let jac = eval_path_gradient(&path, &x).unwrap();
        for j in 0..inst.n() {
            let fd = central_diff(|z| eval_path(&path, z).unwrap()[j], &x, 1e-5);
            for p in 0..d {
                assert_relative_eq!(jac[(j, p)], fd[p], epsilon = 1e-6, max_relative = 1e-4);
            }
        }
        let refs: Vec<Vec<f64>> = (0..8).map(|_| (0..inst.n()).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let space = BehaviorSpace::grid(vec![-3.0; inst.n()], vec![3.0; inst.n()], vec![5; inst.n()]).unwrap();
        let refs = ReferenceSet::from_points(refs, &space, false).unwrap();
        let cfg = NoveltyConfig { k: 3, ..Default::default() };
        let (_, g) = acquisition_with_gradient(&x, &path, &refs, &cfg).unwrap();
        let fd = central_diff(|z| acquisition_with_gradient(z, &path, &refs, &cfg).unwrap().0, &x, 1e-6);
        for p in 0..d {
            assert_relative_eq!(g[p], fd[p], epsilon = 1e-5, max_relative = 1e-4);
        }
    }
}

#[test]
fn box_minimizer_finds_projected_optimum() {
    // minimum of the quadratic lies outside the box in the first coordinate
    let target = [2.0, -0.25, 0.5];
    let f = |x: &[f64]| {
        let v = x.iter().zip(&target).map(|(a, t)| (a - t).powi(2)).sum::<f64>();
        let g = x.iter().zip(&target).map(|(a, t)| 2.0 * (a - t)).collect();
        (v, g)
    };
    let bounds = Bounds::new(vec![-1.0; 3], vec![1.0; 3]).unwrap();
    let r = minimize_box(f, &[0.0, 0.9, -0.9], &bounds, &LbfgsOptions::default());
    assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-9);
    assert_relative_eq!(r.x[1], -0.25, epsilon = 1e-6);
    assert_relative_eq!(r.x[2], 0.5, epsilon = 1e-6);
}

//! Projected limited-memory BFGS for box-constrained minimization.
//!
//! Variables sitting on a bound with the gradient pointing outward are held
//! fixed for the iteration; the two-loop recursion runs over the remaining
//! free variables and steps are projected back into the box during a
//! backtracking Armijo search. Objectives may return `+∞` to reject a point.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Axis-aligned box `lower ≤ x ≤ upper`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Real> Bounds<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                what: "bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::invalid("bounds need at least one dimension"));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && *l <= *u) {
                return Err(Error::invalid(format!("invalid bound pair [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn from_pairs(pairs: &[(T, T)]) -> Result<Self> {
        Self::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn width(&self, i: usize) -> T {
        self.upper[i] - self.lower[i]
    }

    pub fn project(&self, x: &mut [T]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.lower)
                .zip(&self.upper)
                .all(|((v, l), u)| *v >= *l && *v <= *u)
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| *l + (*u - *l) * T::lit(rng.random::<f64>()))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop when the projected gradient's max-norm falls below this.
    pub grad_tol: f64,
    /// Stop when the relative decrease of one iteration falls below this.
    pub f_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            memory: 8,
            grad_tol: 1e-9,
            f_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalMinimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub iterations: usize,
    pub evaluations: usize,
}

fn dot_masked<T: Real>(a: &[T], b: &[T], free: &[bool]) -> T {
    a.iter()
        .zip(b)
        .zip(free)
        .filter(|(_, f)| **f)
        .fold(T::zero(), |s, ((x, y), _)| s + *x * *y)
}

/// Minimizes `f` over `bounds` starting from `x0`. `f` returns the value and
/// gradient; non-finite values reject the point.
pub fn minimize_box<T, F>(mut f: F, x0: &[T], bounds: &Bounds<T>, opts: &LbfgsOptions) -> LocalMinimum<T>
where
    T: Real,
    F: FnMut(&[T]) -> (T, Vec<T>),
{
    let d = bounds.dim();
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let (mut fx, mut gx) = f(&x);
    let mut evaluations = 1;
    let mut iterations = 0;
    if !fx.is_finite() || gx.iter().any(|g| !g.is_finite()) {
        return LocalMinimum {
            x,
            value: fx,
            iterations,
            evaluations,
        };
    }
    let mean_width = (0..d).fold(T::zero(), |s, i| s + bounds.width(i)) / T::lit(d as f64);
    let mut history: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(opts.memory);
    let c1 = T::lit(1e-4);

    while iterations < opts.max_iters {
        iterations += 1;
        let free: Vec<bool> = (0..d)
            .map(|i| {
                let at_lower = x[i] <= bounds.lower[i] && gx[i] > T::zero();
                let at_upper = x[i] >= bounds.upper[i] && gx[i] < T::zero();
                !(at_lower || at_upper)
            })
            .collect();
        let pg = (0..d).fold(T::zero(), |m, i| {
            let moved = (x[i] - gx[i]).clamp(bounds.lower[i], bounds.upper[i]);
            m.max((x[i] - moved).abs())
        });
        if pg <= T::lit(opts.grad_tol) {
            break;
        }

        // two-loop recursion over the free variables
        let mut q: Vec<T> = gx.iter().zip(&free).map(|(g, f)| if *f { *g } else { T::zero() }).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = *rho * dot_masked(s, &q, &free);
            for i in 0..d {
                q[i] -= a * y[i];
            }
            alphas.push(a);
        }
        let gamma = match history.back() {
            Some((s, y, _)) => {
                let yy = dot_masked(y, y, &free);
                if yy > T::zero() {
                    dot_masked(s, y, &free) / yy
                } else {
                    T::one()
                }
            }
            None => T::one(),
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = *rho * dot_masked(y, &q, &free);
            for i in 0..d {
                q[i] += s[i] * (*a - b);
            }
        }
        let mut dir: Vec<T> = q.iter().zip(&free).map(|(v, f)| if *f { -*v } else { T::zero() }).collect();
        let mut slope = dot_masked(&dir, &gx, &free);
        if !(slope < T::zero()) || dir.iter().any(|v| !v.is_finite()) {
            dir = gx.iter().zip(&free).map(|(g, f)| if *f { -*g } else { T::zero() }).collect();
            slope = dot_masked(&dir, &gx, &free);
            history.clear();
        }
        if !(slope < T::zero()) {
            break;
        }
        let mut step = if history.is_empty() {
            let dmax = dir.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            (T::lit(0.1) * mean_width / dmax).min(T::one())
        } else {
            T::one()
        };

        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<T> = x.iter().zip(&dir).map(|(xi, di)| *xi + step * *di).collect();
            bounds.project(&mut xn);
            if xn == x {
                break;
            }
            let (fn_, gn) = f(&xn);
            evaluations += 1;
            let decrease = x.iter().zip(&xn).zip(&gx).fold(T::zero(), |s, ((a, b), g)| s + (*b - *a) * *g);
            if fn_.is_finite() && gn.iter().all(|g| g.is_finite()) && fn_ <= fx + c1 * decrease {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= T::lit(0.5);
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s: Vec<T> = xn.iter().zip(&x).map(|(a, b)| *a - *b).collect();
        let y: Vec<T> = gn.iter().zip(&gx).map(|(a, b)| *a - *b).collect();
        let sy = s.iter().zip(&y).fold(T::zero(), |acc, (a, b)| acc + *a * *b);
        let ss = s.iter().fold(T::zero(), |acc, a| acc + *a * *a);
        let yy = y.iter().fold(T::zero(), |acc, a| acc + *a * *a);
        if sy > T::lit(1e-12) * (ss * yy).sqrt() && sy > T::zero() {
            if history.len() == opts.memory.max(1) {
                history.pop_front();
            }
            history.push_back((s, y, T::one() / sy));
        }
        let rel = (fx - fn_) / fx.abs().max(T::one());
        x = xn;
        fx = fn_;
        gx = gn;
        if rel <= T::lit(opts.f_tol) {
            break;
        }
    }
    LocalMinimum {
        x,
        value: fx,
        iterations,
        evaluations,
    }
}

/// Maximizes `f` by minimizing `-f`; see [`minimize_box`].
pub fn maximize_box<T, F>(mut f: F, x0: &[T], bounds: &Bounds<T>, opts: &LbfgsOptions) -> LocalMinimum<T>
where
    T: Real,
    F: FnMut(&[T]) -> (T, Vec<T>),
{
    let mut res = minimize_box(
        |x| {
            let (v, g) = f(x);
            let neg = if v.is_finite() { -v } else { T::lit(f64::INFINITY) };
            (neg, g.into_iter().map(|gi| -gi).collect())
        },
        x0,
        bounds,
        opts,
    );
    res.value = -res.value;
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rosen(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = 100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2);
        let g = vec![-400.0 * a * (b - a * a) - 2.0 * (1.0 - a), 200.0 * (b - a * a)];
        (f, g)
    }

    #[test]
    fn finds_unconstrained_rosenbrock_minimum() {
        let b = Bounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
        let opts = LbfgsOptions {
            max_iters: 500,
            ..Default::default()
        };
        let r = minimize_box(rosen, &[-1.2, 1.0], &b, &opts);
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-4);
        assert_relative_eq!(r.x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn respects_active_bounds() {
        // minimum of (x-3)^2 + (y+2)^2 on [0,1]^2 is (1, 0)
        let b = Bounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let r = minimize_box(
            |x: &[f64]| {
                (
                    (x[0] - 3.0).powi(2) + (x[1] + 2.0).powi(2),
                    vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 2.0)],
                )
            },
            &[0.5, 0.5],
            &b,
            &LbfgsOptions::default(),
        );
        assert_eq!(r.x, vec![1.0, 0.0]);
        assert!(b.contains(&r.x));
    }

    #[test]
    fn never_worse_than_start_and_rejects_infinite_region() {
        let b = Bounds::new(vec![-2.0], vec![2.0]).unwrap();
        // feasible only for x <= 0.5
        let f = |x: &[f64]| {
            if x[0] > 0.5 {
                (f64::INFINITY, vec![0.0])
            } else {
                ((x[0] - 1.0).powi(2), vec![2.0 * (x[0] - 1.0)])
            }
        };
        let r = minimize_box(f, &[-1.5], &b, &LbfgsOptions::default());
        assert!(r.x[0] <= 0.5);
        assert!(r.value <= (-1.5f64 - 1.0).powi(2));
    }

    #[test]
    fn maximize_flips_sign() {
        let b = Bounds::new(vec![-1.0], vec![1.0]).unwrap();
        let r = maximize_box(|x: &[f64]| (-(x[0] - 0.3).powi(2), vec![-2.0 * (x[0] - 0.3)]), &[0.9], &b, &LbfgsOptions::default());
        assert_relative_eq!(r.x[0], 0.3, epsilon = 1e-6);
        assert!(r.value <= 0.0 && r.value > -1e-10);
    }

    #[test]
    fn bounds_validation() {
        assert!(Bounds::new(vec![1.0], vec![0.0]).is_err());
        assert!(Bounds::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(Bounds::<f64>::new(vec![], vec![]).is_err());
    }
}

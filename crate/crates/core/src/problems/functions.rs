//! Closed-form benchmark functions.

use std::f64::consts::{E, PI, TAU};

use crate::{Error, Result};

pub const ACKLEY_A: f64 = 20.0;
pub const ACKLEY_B: f64 = 0.2;
pub const ACKLEY_C: f64 = TAU;

/// Decay width of the radial factors in [`multi_output_plus`].
pub const PLUS_DECAY: f64 = 2.0;

pub fn ackley(x: &[f64]) -> f64 {
    let n = x.len().max(1) as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let cs = x.iter().map(|v| (ACKLEY_C * v).cos()).sum::<f64>() / n;
    -ACKLEY_A * (-ACKLEY_B * sq.sqrt()).exp() - cs.exp() + ACKLEY_A + E
}

pub fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

pub fn styblinski_tang(x: &[f64]) -> f64 {
    0.5 * x.iter().map(|v| v.powi(4) - 16.0 * v * v + 5.0 * v).sum::<f64>()
}

/// Two outputs on `[-5, 5]^6`, each a linear stretch of one input damped by
/// a Gaussian bump in a separate input pair:
///
/// ```text
/// y1 = x1 · exp(−(x3² + x4²) / (2 s²))
/// y2 = x2 · exp(−(x5² + x6²) / (2 s²))
/// ```
///
/// with `s = PLUS_DECAY`. Uniform inputs land mostly near the origin; large
/// `|y1|` or `|y2|` need the matching pair near zero, so the outcome cloud
/// is a plus whose corners are rare. Every point of `[-5, 5]^2` is attained
/// (set `x3..x6 = 0`).
pub fn multi_output_plus(x: &[f64]) -> Result<[f64; 2]> {
    if x.len() != 6 {
        return Err(Error::DimensionMismatch {
            what: "multi_output_plus input",
            expected: 6,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !(-5.0..=5.0).contains(v)) {
        return Err(Error::invalid("multi_output_plus input outside [-5, 5]^6"));
    }
    let s2 = 2.0 * PLUS_DECAY * PLUS_DECAY;
    Ok([
        x[0] * (-(x[2] * x[2] + x[3] * x[3]) / s2).exp(),
        x[1] * (-(x[4] * x[4] + x[5] * x[5]) / s2).exp(),
    ])
}

/// Monotone staircase on `[0, 1]`: `f(x) = (u − sin(2πu)/(2π)) / 5` with
/// `u = 5x`. Flat treads sit at multiples of 0.2; each of five equal
/// outcome bins on `[0, 1]` maps back to one fifth of the input range.
pub fn staircase(x: f64) -> f64 {
    let u = 5.0 * x;
    (u - (2.0 * PI * u).sin() / (2.0 * PI)) / 5.0
}

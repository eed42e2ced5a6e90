//! Gray-code Sobol sequence with Joe–Kuo direction numbers and optional
//! random digital-shift scrambling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

const BITS: usize = 32;

/// (s, a, m_1..m_s) for dimensions 2..=21 (new-joe-kuo-6.21201).
const JOE_KUO: &[(u32, u32, &[u32])] = &[
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
];

/// Largest supported dimension.
pub const MAX_DIM: usize = JOE_KUO.len() + 1;

fn directions(dim: usize) -> Vec<[u32; BITS]> {
    let mut out = Vec::with_capacity(dim);
    let mut first = [0u32; BITS];
    for (i, v) in first.iter_mut().enumerate() {
        *v = 1 << (BITS - 1 - i);
    }
    out.push(first);
    for &(s, a, m) in JOE_KUO.iter().take(dim.saturating_sub(1)) {
        let s = s as usize;
        let mut v = [0u32; BITS];
        for i in 0..s.min(BITS) {
            v[i] = m[i] << (BITS - 1 - i);
        }
        for i in s..BITS {
            let mut x = v[i - s] ^ (v[i - s] >> s);
            for k in 1..s {
                x ^= ((a >> (s - 1 - k)) & 1) * v[i - k];
            }
            v[i] = x;
        }
        out.push(v);
    }
    out
}

#[derive(Clone, Debug)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    shift: Vec<u32>,
    index: u64,
}

impl Sobol {
    /// Unscrambled sequence; the first point returned is index 1 (all 0.5).
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Unsupported(format!(
                "sobol dimension {dim} outside the supported range 1..={MAX_DIM}"
            )));
        }
        Ok(Self {
            directions: directions(dim),
            state: vec![0; dim],
            shift: vec![0; dim],
            index: 0,
        })
    }

    /// Sequence XOR-shifted by a seeded random digit vector per coordinate.
    pub fn scrambled(dim: usize, seed: u64) -> Result<Self> {
        let mut s = Self::new(dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        s.shift = (0..dim).map(|_| rng.random()).collect();
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.state.len()
    }

    /// Index of the next point to be returned.
    pub fn position(&self) -> u64 {
        self.index + 1
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let c = self.index.trailing_ones() as usize;
        assert!(c < BITS, "sobol sequence exhausted");
        for (x, v) in self.state.iter_mut().zip(&self.directions) {
            *x ^= v[c];
        }
        self.index += 1;
        self.state
            .iter()
            .zip(&self.shift)
            .map(|(x, s)| f64::from(x ^ s) / 2f64.powi(BITS as i32))
            .collect()
    }
}

impl Iterator for Sobol {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        Some(self.next_point())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leading_points_match_published_sequence() {
        let mut s = Sobol::new(3).unwrap();
        assert_eq!(s.next_point(), vec![0.5, 0.5, 0.5]);
        assert_eq!(s.next_point(), vec![0.75, 0.25, 0.25]);
        assert_eq!(s.next_point(), vec![0.25, 0.75, 0.75]);
        assert_eq!(s.next_point(), vec![0.375, 0.375, 0.625]);
        assert_eq!(s.next_point(), vec![0.875, 0.875, 0.125]);
    }

    #[test]
    fn first_point_is_center_in_every_dimension() {
        for d in 1..=MAX_DIM {
            assert_eq!(Sobol::new(d).unwrap().next_point(), vec![0.5; d]);
        }
        assert!(Sobol::new(MAX_DIM + 1).is_err());
        assert!(Sobol::new(0).is_err());
    }

    #[test]
    fn each_coordinate_stratifies_dyadic_intervals() {
        // the first 2^m points after the origin, plus the origin, hit every
        // interval [j/2^m, (j+1)/2^m) exactly once
        let m = 6;
        let mut s = Sobol::new(MAX_DIM).unwrap();
        let mut pts = vec![vec![0.0; MAX_DIM]];
        pts.extend((1..1 << m).map(|_| s.next_point()));
        for d in 0..MAX_DIM {
            let mut hits = vec![0; 1 << m];
            for p in &pts {
                hits[(p[d] * f64::from(1 << m)) as usize] += 1;
            }
            assert!(hits.iter().all(|h| *h == 1), "dimension {d}");
        }
    }

    #[test]
    fn scrambling_is_seeded_and_in_unit_cube() {
        let a: Vec<_> = Sobol::scrambled(4, 3).unwrap().take(50).collect();
        let b: Vec<_> = Sobol::scrambled(4, 3).unwrap().take(50).collect();
        let c: Vec<_> = Sobol::scrambled(4, 4).unwrap().take(50).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().flatten().all(|v| (0.0..1.0).contains(v)));
    }
}

//! Model-free baselines: uniform random search, scrambled Sobol, and a
//! novelty-search evolutionary algorithm.


use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{open_indices, Choice, Proposal, StepContext, StepInfo, Strategy};
use crate::acquisition::{distance, Metric};
use crate::problems::Problem;
use crate::sobol::Sobol;
use crate::{Error, Result};

/// Uniform draws over the box, or uniform unevaluated pool indices.
pub struct RandomSearch;

impl Strategy for RandomSearch {
    fn name(&self) -> &'static str {
        "rs"
    }

    fn propose(&mut self, ctx: &StepContext<'_>, rng: &mut ChaCha8Rng) -> Result<Proposal> {
        let choice = match ctx.problem {
            Problem::Continuous(p) => Choice::Point(p.bounds().sample_uniform(rng)),
            Problem::Pool(p) => {
                let open = open_indices(p.len(), ctx.evaluated);
                if open.is_empty() {
                    return Err(Error::PoolExhausted);
                }
                Choice::Index(open[rng.random_range(0..open.len())])
            }
        };
        Ok(Proposal {
            choice,
            info: StepInfo::default(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SobolConfig {
    /// Random digital shift seeded per replicate.
    pub scramble: bool,
}

impl Default for SobolConfig {
    fn default() -> Self {
        Self { scramble: true }
    }
}

/// Next point of a Sobol sequence mapped to the box; in pool mode the
/// nearest unevaluated candidate in box-normalized coordinates.
pub struct SobolSearch {
    seq: Sobol,
}

impl SobolSearch {
    pub fn new(config: &SobolConfig, dim: usize, seed: u64) -> Result<Self> {
        let seq = if config.scramble { Sobol::scrambled(dim, seed)? } else { Sobol::new(dim)? };
        Ok(Self { seq })
    }
}

impl Strategy for SobolSearch {
    fn name(&self) -> &'static str {
        "sobol"
    }

    fn propose(&mut self, ctx: &StepContext<'_>, _rng: &mut ChaCha8Rng) -> Result<Proposal> {
        let u = self.seq.next_point();
        let bounds = ctx.problem.input_bounds();
        let choice = match ctx.problem {
            Problem::Continuous(_) => Choice::Point(
                u.iter()
                    .enumerate()
                    .map(|(i, v)| bounds.lower()[i] + v * bounds.width(i))
                    .collect(),
            ),
            Problem::Pool(p) => {
                let mut best: Option<(usize, f64)> = None;
                for i in open_indices(p.len(), ctx.evaluated) {
                    let x = &p.candidates()[i];
                    let d2: f64 = (0..x.len())
                        .map(|k| ((x[k] - bounds.lower()[k]) / bounds.width(k) - u[k]).powi(2))
                        .sum();
                    if best.is_none_or(|b| d2 < b.1) {
                        best = Some((i, d2));
                    }
                }
                Choice::Index(best.ok_or(Error::PoolExhausted)?.0)
            }
        };
        Ok(Proposal {
            choice,
            info: StepInfo::default(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EaConfig {
    pub population_size: usize,
    /// Mutation standard deviation as a fraction of each box width.
    pub mutation_scale: f64,
    pub novelty_k: usize,
    pub metric: Metric,
}

impl Default for EaConfig {
    fn default() -> Self {
        Self {
            population_size: 20,
            mutation_scale: 0.1,
            novelty_k: 10,
            metric: Metric::Euclidean,
        }
    }
}

impl EaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::invalid("population_size must be at least 2"));
        }
        if !(self.mutation_scale > 0.0 && self.mutation_scale <= 1.0) {
            return Err(Error::invalid("mutation_scale must lie in (0, 1]"));
        }
        if self.novelty_k == 0 {
            return Err(Error::invalid("novelty_k must be at least 1"));
        }
        Ok(())
    }
}

/// Mean distance from `y` to its `k` nearest archive entries, skipping
/// entry `exclude` (the point itself when scoring an archive member).
/// Returns `+∞` for an empty comparison set.
pub fn archive_novelty(y: &[f64], archive: &[Vec<f64>], k: usize, metric: Metric, exclude: Option<usize>) -> f64 {
    let mut d: Vec<f64> = archive
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, a)| distance(y, a, metric))
        .collect();
    if d.is_empty() {
        return f64::INFINITY;
    }
    d.sort_by(f64::total_cmp);
    let k = k.clamp(1, d.len());
    d[..k].iter().sum::<f64>() / k as f64
}

/// Novelty-search EA: mutate the most novel population member (novelty
/// against all observed noisy outcomes), then evict the least novel.
pub struct NsEa {
    config: EaConfig,
    /// Dataset rows forming the population.
    population: Vec<usize>,
    initialized: bool,
}

impl NsEa {
    pub fn new(config: EaConfig) -> Self {
        Self {
            config,
            population: Vec::new(),
            initialized: false,
        }
    }

    pub fn population(&self) -> &[usize] {
        &self.population
    }

    fn novelty_of(&self, row: usize, outcomes: &[Vec<f64>]) -> f64 {
        archive_novelty(&outcomes[row], outcomes, self.config.novelty_k, self.config.metric, Some(row))
    }

    /// Position in the population of the extreme member, ties to the
    /// earliest.
    fn extreme(&self, outcomes: &[Vec<f64>], most: bool) -> usize {
        let mut best = (0, self.novelty_of(self.population[0], outcomes));
        for (pos, &row) in self.population.iter().enumerate().skip(1) {
            let v = self.novelty_of(row, outcomes);
            if (most && v > best.1) || (!most && v < best.1) {
                best = (pos, v);
            }
        }
        best.0
    }
}

impl Strategy for NsEa {
    fn name(&self) -> &'static str {
        "ns-ea"
    }

    fn propose(&mut self, ctx: &StepContext<'_>, rng: &mut ChaCha8Rng) -> Result<Proposal> {
        let Problem::Continuous(p) = ctx.problem else {
            return Err(Error::Unsupported("ns-ea does not apply to pool problems".into()));
        };
        let outcomes = ctx.data.outcomes();
        if !self.initialized {
            self.population = (0..ctx.data.len()).collect();
            while self.population.len() > self.config.population_size {
                let worst = self.extreme(outcomes, false);
                self.population.remove(worst);
            }
            self.initialized = true;
        }
        if self.population.is_empty() {
            return Err(Error::invalid("ns-ea needs at least one initial point"));
        }
        let parent = self.population[self.extreme(outcomes, true)];
        let bounds = p.bounds();
        let x = &ctx.data.inputs()[parent];
        let child = (0..x.len())
            .map(|i| {
                let sd = self.config.mutation_scale * bounds.width(i);
                let step = Normal::new(0.0, sd).expect("positive scale").sample(rng);
                (x[i] + step).clamp(bounds.lower()[i], bounds.upper()[i])
            })
            .collect();
        Ok(Proposal {
            choice: Choice::Point(child),
            info: StepInfo::default(),
        })
    }

    fn observe(&mut self, ctx: &StepContext<'_>) {
        self.population.push(ctx.data.len() - 1);
        if self.population.len() > self.config.population_size {
            let worst = self.extreme(ctx.data.outcomes(), false);
            self.population.remove(worst);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use crate::gp::Dataset;
    use crate::problems::{builtin, make_space, RangeChoice};
    use rand::SeedableRng;

    #[test]
    fn random_points_are_uniform() {
        let problem = builtin("ackley", Some(2), 0).unwrap();
        let (space, _) = make_space(&problem, &[5], &RangeChoice::Explicit(vec![(0.0, 25.0)])).unwrap();
        let data = Dataset::new(2, 1);
        let ev = HashSet::new();
        let ctx = StepContext {
            problem: &problem,
            space: &space,
            data: &data,
            evaluated: &ev,
            iteration: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut counts = [[0usize; 10]; 2];
        let n = 10_000;
        for _ in 0..n {
            let Choice::Point(x) = RandomSearch.propose(&ctx, &mut rng).unwrap().choice else { panic!() };
            for i in 0..2 {
                assert!(x[i].abs() <= 32.768);
                counts[i][((x[i] + 32.768) / 65.536 * 10.0) as usize] += 1;
            }
        }
        // chi-square with 9 degrees of freedom, 1% critical value 21.67
        for c in counts {
            let e = n as f64 / 10.0;
            let chi: f64 = c.iter().map(|o| (*o as f64 - e).powi(2) / e).sum();
            assert!(chi < 21.67, "{chi}");
        }
    }

    #[test]
    fn sobol_beats_random_discrepancy() {
        // star discrepancy over anchored boxes with corners on the point grid
        fn star(pts: &[Vec<f64>]) -> f64 {
            let n = pts.len() as f64;
            let mut xs: Vec<f64> = pts.iter().map(|p| p[0]).chain([1.0]).collect();
            let mut ys: Vec<f64> = pts.iter().map(|p| p[1]).chain([1.0]).collect();
            xs.sort_by(f64::total_cmp);
            ys.sort_by(f64::total_cmp);
            let mut worst: f64 = 0.0;
            for &a in &xs {
                for &b in &ys {
                    let open = pts.iter().filter(|p| p[0] < a && p[1] < b).count() as f64;
                    let closed = pts.iter().filter(|p| p[0] <= a && p[1] <= b).count() as f64;
                    worst = worst.max((open / n - a * b).abs()).max((closed / n - a * b).abs());
                }
            }
            worst
        }
        let sob: Vec<Vec<f64>> = Sobol::scrambled(2, 1).unwrap().take(256).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rnd: Vec<Vec<f64>> = (0..256).map(|_| vec![rng.random(), rng.random()]).collect();
        assert!(star(&sob) < star(&rnd));
    }

    #[test]
    fn pool_sobol_picks_nearest_open_candidate() {
        use crate::problems::PoolProblem;
        let pool = PoolProblem::new(
            "p",
            vec![vec![0.0, 0.0], vec![0.5, 0.5], vec![0.6, 0.5], vec![1.0, 1.0]],
            vec![vec![0.0]; 4],
        )
        .unwrap();
        let problem = Problem::Pool(pool);
        let (space, _) = make_space(&problem, &[2], &RangeChoice::Explicit(vec![(0.0, 1.0)])).unwrap();
        let data = Dataset::new(2, 1);
        let mut s = SobolSearch::new(&SobolConfig { scramble: false }, 2, 0).unwrap();
        let ev: HashSet<usize> = [1].into_iter().collect();
        let ctx = StepContext {
            problem: &problem,
            space: &space,
            data: &data,
            evaluated: &ev,
            iteration: 0,
        };
        // first point is (0.5, 0.5); candidate 1 is taken, so candidate 2
        let p = s.propose(&ctx, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.choice, Choice::Index(2));
    }

    #[test]
    fn novelty_against_archive() {
        let archive = vec![vec![3.0, 4.0]];
        assert_eq!(archive_novelty(&[0.0, 0.0], &archive, 10, Metric::Euclidean, None), 5.0);
        assert_eq!(archive_novelty(&[0.0, 0.0], &archive, 10, Metric::Euclidean, Some(0)), f64::INFINITY);
    }

    #[test]
    fn population_ranking_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random_range(-5.0..5.0)]).collect();
        let ys: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let data = Dataset::from_rows(1, 2, xs, ys.clone()).unwrap();
        let mut ea = NsEa::new(EaConfig { population_size: 12, novelty_k: 3, ..EaConfig::default() });
        let problem = Problem::Continuous(
            crate::problems::ContinuousProblem::new(
                "t",
                crate::optimize::Bounds::new(vec![-5.0], vec![5.0]).unwrap(),
                2,
                |x| Ok(vec![x[0], -x[0]]),
            )
            .unwrap(),
        );
        let (space, _) = make_space(&problem, &[2, 2], &RangeChoice::Explicit(vec![(-1.0, 1.0), (-1.0, 1.0)])).unwrap();
        let ev = HashSet::new();
        let ctx = StepContext {
            problem: &problem,
            space: &space,
            data: &data,
            evaluated: &ev,
            iteration: 0,
        };
        let p = ea.propose(&ctx, &mut rng).unwrap();
        // brute force: novelty of each row against all others, keep the 12 most novel
        let nov = |i: usize| {
            let mut d: Vec<f64> = (0..30)
                .filter(|j| *j != i)
                .map(|j| ((ys[i][0] - ys[j][0]).powi(2) + (ys[i][1] - ys[j][1]).powi(2)).sqrt())
                .collect();
            d.sort_by(f64::total_cmp);
            d[..3].iter().sum::<f64>() / 3.0
        };
        let mut order: Vec<usize> = (0..30).collect();
        order.sort_by(|a, b| nov(*b).total_cmp(&nov(*a)));
        let mut expect: Vec<usize> = order[..12].to_vec();
        expect.sort_unstable();
        let mut got = ea.population().to_vec();
        got.sort_unstable();
        assert_eq!(got, expect);
        // the child mutates the most novel row and stays in the box
        let Choice::Point(c) = p.choice else { panic!() };
        assert!(c[0].abs() <= 5.0);
        assert!((c[0] - data.inputs()[order[0]][0]).abs() < 5.0);
    }
}

//! Experiment configuration files.
//!
//! A config is a TOML document:
//!
//! ```toml
//! iterations = 90
//! n_init = 10
//! replicates = 20
//! base_seed = 0
//! output = "results/ackley-4"
//!
//! [problem]
//! name = "ackley"
//! dim = 4
//!
//! [space]
//! bins = [25]
//!
//! [[algorithms]]
//! name = "beacon"
//! novelty = { k = 10 }
//!
//! [[algorithms]]
//! name = "rs"
//! ```
//!
//! Unknown keys are rejected everywhere. [`ExperimentConfig::prepare`]
//! builds the problem and behavior space and checks every setting before
//! anything runs.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use beacon_core::algorithms::AlgorithmConfig;
use beacon_core::behavior::BehaviorSpace;
use beacon_core::problems::{builtin, load_pool, make_space, Problem, RangeChoice, RangeSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

fn default_n_init() -> usize {
    10
}

fn default_replicates() -> usize {
    20
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub space: SpaceSpec,
    pub algorithms: Vec<AlgorithmConfig>,
    /// Search steps per replicate after the initial design.
    pub iterations: usize,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Replicate `r` runs with seed `base_seed + r`.
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    /// A built-in problem, or `pool` for a candidate file.
    pub name: String,
    /// Input dimension of the dimension-generic functions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Seed of generated pools.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Pool CSV, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dim: Option<usize>,
    /// Per-output observation noise; absent means 1% of each output's
    /// empirical standard deviation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    /// Equal-width bins along each outcome.
    pub bins: Vec<usize>,
    /// `[lo, hi]` per outcome; absent means automatic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<Vec<[f64; 2]>>,
}

/// A validated config together with everything built from it.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: Problem,
    pub space: BehaviorSpace<f64>,
    pub range: RangeSpec,
    /// Hex SHA-256 over everything that determines trace contents.
    pub hash: String,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.message().to_string() + &span_hint(text, e.span())))
    }

    /// Reads a config file; a relative pool path is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(p) = &config.problem.path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new(""));
                config.problem.path = Some(base.join(p));
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Builds the problem and behavior space and checks every setting.
    pub fn prepare(&self) -> Result<Experiment> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if self.n_init == 0 {
            return Err(Error::config("n_init must be at least 1"));
        }
        if self.replicates == 0 {
            return Err(Error::config("replicates must be at least 1"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::config("algorithms: at least one algorithm is required"));
        }
        let mut names = HashSet::new();
        for a in &self.algorithms {
            if !names.insert(a.name()) {
                return Err(Error::config(format!("algorithms: {} listed twice", a.name())));
            }
        }
        let (problem, pool_digest) = self.problem.build()?;
        if self.space.bins.len() != problem.output_dim() {
            return Err(Error::config(format!(
                "space.bins: {} entries for {} outputs",
                self.space.bins.len(),
                problem.output_dim()
            )));
        }
        let choice = match &self.space.range {
            None => RangeChoice::Auto,
            Some(r) => RangeChoice::Explicit(r.iter().map(|[lo, hi]| (*lo, *hi)).collect()),
        };
        let (space, range) = make_space(&problem, &self.space.bins, &choice).map_err(|e| Error::config(format!("space: {e}")))?;
        if let Problem::Pool(pool) = &problem {
            if self.n_init + self.iterations > pool.len() {
                return Err(Error::config(format!(
                    "n_init + iterations = {} exceeds the pool size {}",
                    self.n_init + self.iterations,
                    pool.len()
                )));
            }
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            a.validate(Some(&problem), Some(&space))
                .map_err(|e| Error::config(format!("algorithms[{i}] ({}): {e}", a.name())))?;
        }
        let hash = self.hash(pool_digest.as_deref())?;
        Ok(Experiment {
            config: self.clone(),
            problem,
            space,
            range,
            hash,
        })
    }

    fn hash(&self, pool_digest: Option<&str>) -> Result<String> {
        #[derive(Serialize)]
        struct Hashed<'a> {
            problem: ProblemSpec,
            pool_sha256: Option<&'a str>,
            space: &'a SpaceSpec,
            algorithms: &'a [AlgorithmConfig],
            iterations: usize,
            n_init: usize,
            base_seed: u64,
        }
        // the pool enters through its contents, not its location
        let problem = ProblemSpec {
            path: None,
            ..self.problem.clone()
        };
        let bytes = serde_json::to_vec(&Hashed {
            problem,
            pool_sha256: pool_digest,
            space: &self.space,
            algorithms: &self.algorithms,
            iterations: self.iterations,
            n_init: self.n_init,
            base_seed: self.base_seed,
        })
        .map_err(|e| Error::config(e.to_string()))?;
        Ok(hex(&Sha256::digest(&bytes)))
    }
}

impl ProblemSpec {
    /// The problem with its noise applied, plus the SHA-256 of the pool file
    /// when there is one.
    fn build(&self) -> Result<(Problem, Option<String>)> {
        let ctx = |e: beacon_core::Error| Error::config(format!("problem: {e}"));
        let (problem, digest) = if self.name == "pool" {
            if self.dim.is_some() || self.seed.is_some() {
                return Err(Error::config("problem: dim and seed do not apply to file pools"));
            }
            let (Some(path), Some(d), Some(n)) = (&self.path, self.input_dim, self.output_dim) else {
                return Err(Error::config("problem: pool needs path, input_dim and output_dim"));
            };
            let bytes = fs::read(path).map_err(|e| Error::config(format!("problem.path {}: {e}", path.display())))?;
            let pool = load_pool(path, d, n).map_err(ctx)?;
            (Problem::Pool(pool), Some(hex(&Sha256::digest(&bytes))))
        } else {
            if self.path.is_some() || self.input_dim.is_some() || self.output_dim.is_some() {
                return Err(Error::config("problem: path, input_dim and output_dim only apply to name = \"pool\""));
            }
            (builtin(&self.name, self.dim, self.seed.unwrap_or(0)).map_err(ctx)?, None)
        };
        let noise = match &self.noise_std {
            Some(v) => v.clone(),
            None => problem.default_noise_std().map_err(ctx)?,
        };
        Ok((problem.with_noise_std(noise).map_err(ctx)?, digest))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(s) => {
            let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
iterations = 5
n_init = 3
replicates = 2

[problem]
name = "ackley"
dim = 2

[space]
bins = [10]

[[algorithms]]
name = "rs"

[[algorithms]]
name = "beacon"
novelty = { k = 3 }
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(BASIC).unwrap();
        assert_eq!(c.base_seed, 0);
        assert_eq!(c.output, PathBuf::from("results"));
        assert_eq!(c.algorithms.len(), 2);
        let AlgorithmConfig::Beacon(b) = &c.algorithms[1] else { panic!() };
        assert_eq!(b.novelty.k, 3);
        let exp = c.prepare().unwrap();
        assert_eq!(exp.space.num_bins(), 10);
        assert_eq!(exp.hash.len(), 64);
        // default noise is positive
        assert!(exp.problem.noise_std()[0] > 0.0);
    }

    #[test]
    fn unknown_keys_are_named() {
        for (text, key) in [
            (BASIC.replace("n_init = 3", "n_init = 3\nbogus = 1"), "bogus"),
            (BASIC.replace("dim = 2", "dim = 2\ndimension = 3"), "dimension"),
            (BASIC.replace("k = 3", "k = 3, kk = 1"), "kk"),
        ] {
            let err = ExperimentConfig::from_toml(&text).unwrap_err();
            assert!(matches!(err, Error::Config(_)));
            assert!(err.to_string().contains(key), "{err}");
        }
    }

    #[test]
    fn semantic_errors_are_config_errors() {
        let cases = [
            BASIC.replace("bins = [10]", "bins = [10, 10]"),
            BASIC.replace("iterations = 5", "iterations = 0"),
            BASIC.replace("name = \"ackley\"", "name = \"nope\""),
            BASIC.replace("k = 3", "k = 0"),
            BASIC.replace("name = \"rs\"", "name = \"beacon\""),
            BASIC.replace("bins = [10]", "bins = [10]\nrange = [[1.0, 1.0]]"),
        ];
        for text in cases {
            let err = ExperimentConfig::from_toml(&text).and_then(|c| c.prepare()).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{err}");
        }
    }

    #[test]
    fn hash_tracks_trace_relevant_fields_only() {
        let c = ExperimentConfig::from_toml(BASIC).unwrap();
        let h = c.prepare().unwrap().hash;
        let mut more = c.clone();
        more.replicates = 7;
        more.output = PathBuf::from("elsewhere");
        assert_eq!(more.prepare().unwrap().hash, h);
        let mut seed = c.clone();
        seed.base_seed = 1;
        assert_ne!(seed.prepare().unwrap().hash, h);
        let mut t = c.clone();
        t.iterations = 6;
        assert_ne!(t.prepare().unwrap().hash, h);
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::from_toml(BASIC).unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn pool_needs_file_fields_and_capacity() {
        let pool = BASIC.replace("name = \"ackley\"\ndim = 2", "name = \"long-tail-pool\"").replace("bins = [10]", "bins = [25]");
        ExperimentConfig::from_toml(&pool).unwrap().prepare().unwrap();
        let big = pool.replace("iterations = 5", "iterations = 1998");
        assert!(ExperimentConfig::from_toml(&big).unwrap().prepare().is_err());
        let file = BASIC.replace("name = \"ackley\"\ndim = 2", "name = \"pool\"");
        assert!(ExperimentConfig::from_toml(&file).unwrap().prepare().is_err());
    }
}

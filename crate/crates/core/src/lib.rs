//! Sample-efficient novelty search over expensive black-box functions.
//!
//! The crate models the input-to-outcome map with a latent-input multi-output
//! Gaussian process, draws pathwise posterior samples, and picks the next
//! query by maximizing a k-nearest-neighbor novelty score of the sampled
//! outcome against posterior-mean references. Baseline strategies, benchmark
//! problems and the behavior-gap metrics live alongside.
//!
//! The numerical core ([`behavior`], [`gp`], [`sampling`], [`acquisition`],
//! [`optimize`]) is generic over the scalar type through [`Real`]; the
//! experiment-facing layers ([`problems`], [`algorithms`]) use `f64`. The
//! aliases at the crate root name the `f64` instantiations.

pub mod acquisition;
pub mod algorithms;
pub mod behavior;
mod error;
pub mod gp;
pub mod linalg;
pub mod optimize;
pub mod problems;
pub mod sampling;
pub mod sobol;

pub use error::{Error, Result};

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the numerical core: `f32` or `f64`.
pub trait Real:
    nalgebra::RealField + Copy + FromPrimitive + ToPrimitive + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Lossy for `f32`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type OutcomeBox = behavior::OutcomeBox<f64>;
pub type BehaviorSpace = behavior::BehaviorSpace<f64>;
pub type Dataset = gp::Dataset<f64>;
pub type KernelSpec = gp::KernelSpec<f64>;
pub type FittedGp = gp::FittedGp<f64>;
pub type FeatureMap = sampling::FeatureMap<f64>;
pub type PathSample = sampling::PathSample<f64>;
pub type ReferenceSet = acquisition::ReferenceSet<f64>;

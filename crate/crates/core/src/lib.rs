//! Online dependent rounding for bipartite (b-)matchings, with exact small-instance
//! analysis, a stochastic-arrival variant, and edge-coloring / multi-stage cover
//! applications.

pub mod apps;
pub mod bench;
pub mod binpack;
pub mod crs;
pub mod error;
pub mod exact;
pub mod flow;
pub mod instance;
pub mod level_set;
pub mod lp;
pub mod odrs;
pub mod rng;
pub mod scalar;
pub mod scaling;
pub mod stochastic;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Floating scalar used by the probabilistic engines.
pub type Real = f64;
/// Exact rational scalar for the generic components.
pub type Exact = num_rational::BigRational;

pub type Params = scaling::ScalingParams<Real>;
pub type LevelSetStateF64 = level_set::LevelSetState<Real>;
pub type LevelSetStateExact = level_set::LevelSetState<Exact>;
pub type BitDistributionF64 = level_set::BitDistribution<Real>;
pub type BitDistributionExact = level_set::BitDistribution<Exact>;

//! Deep clustering survival machines.
//!
//! Per-instance survival is a convex combination of `K` Weibull experts
//! shared by the whole population. The combination weights come from a
//! small MLP over the features, and the expert with the largest weight is
//! the instance's cluster.
//!
//! ```no_run
//! use dcsm::{dataset::SurvivalDataset, trainer::{fit, TrainConfig}};
//!
//! # fn main() -> dcsm::Result<()> {
//! let raw = SurvivalDataset::load_csv("pbc.csv", "time", "event")?;
//! let train = raw.standardize_and_scale()?;
//! let report = fit(&train, &TrainConfig { k_experts: 2, ..TrainConfig::default() })?;
//! let model = report.model;
//! let x = raw.record(0).features;
//! println!("cluster {} S(365) = {:.3}",
//!     model.assign_cluster(&x)?, model.predict_survival(&x, 365.0)?);
//! # Ok(())
//! # }
//! ```

pub mod dataset;
pub mod error;
pub mod exec;
pub mod gating;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod persist;
pub mod synthetic;
pub mod trainer;
pub mod weibull;

pub use dataset::{FoldSplit, SurvivalDataset, SurvivalRecord, Transform};
pub use error::{DcsmError, Result};
pub use exec::Execution;
pub use gating::{GatingNetwork, ParameterVector};
pub use model::{DcsmModel, LossBreakdown, MixtureWeights};
pub use weibull::{WeibullExpert, WeibullPrior};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The crate-wide seeded generator. All shuffles and draws go through it.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream seed from a base seed and an index
/// (splitmix64 finalizer).
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

//! Heterogeneous tabular transfer learning: align two datasets with
//! mismatched feature spaces and missing values, pair their instances,
//! learn a shared latent space via linear, kernel or deep CCA, and
//! evaluate classification transfer and domain divergence.

pub mod cca;
pub mod data;
pub mod dcca;
pub mod divergence;
pub mod error;
pub mod eval;
pub mod impute;
pub mod kcca;
pub mod kernel;
pub mod pairing;
pub mod pipeline;

pub use data::{Dataset, FeatureMeta, FeaturePartition, SynthConfig};
pub use error::{Error, Result};
pub use impute::{ImputeMode, UnifiedPair};
pub use kernel::KernelSpec;
pub use pairing::PairedViews;

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amplitude;
pub mod analysis;
pub mod config;
pub mod error;
pub mod noise;
pub mod output;
pub mod spde;
pub mod spectral;
pub mod stats;
pub mod tangent;
pub mod thresholds;

pub use config::{ConfigHash, ExperimentConfig, ScalingRule};
pub use error::{Error, Result};
pub use noise::{NoiseKey, NoiseSpec};
pub use spde::{simulate, SimParams, Trajectory};
pub use spectral::{BasisKind, ModelPreset, ModelSpec, SpectralField};

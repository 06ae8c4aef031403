//! Stochastic MAP reconstruction for multicoil MRI with implicit denoiser
//! priors, plus the simulation, baseline, and evaluation tooling around it.

pub mod cg;
pub mod cli;
pub mod config;
pub mod container;
pub mod data;
pub mod denoise;
pub mod error;
pub mod metrics;
pub mod ops;
pub mod sim;
pub mod solver;

pub use config::RunConfig;
pub use data::{ComplexImage, MultiCoilKSpace, SeededRng};
pub use error::{ImmapError, Result};
pub use ops::{EncodingOp, SamplingMask, SensitivityMaps};
pub use solver::{immap_reconstruct, prior_sample, ImmapConfig, NoiseModel};

//! Concrete fatigue under block loading: a uniaxial anisotropic-damage
//! simulator, a physics-constrained feed-forward surrogate trained on its
//! two-stage outputs, and an iterative remaining-life predictor for
//! multi-level loading.
//!
//! Module map:
//! - [`material`]: constitutive functions and the explicit stress stepper
//! - [`protocol`]: block loading scenarios and stress reversals
//! - [`simulator`]: cycle-by-cycle driver, S-N tables, two-stage labels
//! - [`dataset`]: the two-stage scenario grid, labels and splits
//! - [`nn`]: network, physics-augmented loss, Adam training, persistence
//! - [`lifetime`]: iterative remaining-life prediction over load jumps
//! - [`studies`]: multi-level validation and multi-jump campaigns
//! - [`config`]: flat `key = value` run configuration

pub mod config;
pub mod dataset;
pub mod lifetime;
pub mod material;
pub mod nn;
pub mod protocol;
pub mod simulator;
pub mod studies;
pub mod util;

pub use material::{MaterialParameters, UniaxialState};
pub use protocol::{CycleDiscretization, LoadBlock, LoadScenario};
pub use simulator::{SimulationSettings, SnTable};

/// Version string embedded in every output artifact.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

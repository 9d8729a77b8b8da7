//! Long-pulse BOTDA toolkit: transient Brillouin gain simulation,
//! synthetic dataset generation, a residual CNN that retrieves
//! sub-pulse-width BFS profiles, and the classical LCF/DPP baselines
//! it is benchmarked against.

pub mod autodiff;
pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod physics;
pub mod srnet;

pub use error::{Error, Result};

//! PCA-based adaptive search (PAS) for few-step probability-flow ODE sampling.
//!
//! The crate works on analytic score fields (Gaussians and Gaussian mixtures
//! under the EDM parameterization `x_t = x_0 + t·n`), so every sampler, the
//! trajectory subspace extraction and the coordinate correction can be checked
//! against closed-form or high-resolution oracles.
//!
//! Module map:
//! - [`timegrid`]: polynomial time schedule and nested teacher grids.
//! - [`scorefield`]: Gaussian / mixture score fields and the exact single-Gaussian flow.
//! - [`solvers`]: Euler (DDIM), iPNDM and Heun steps, trajectory recording.
//! - [`subspace`]: trajectory basis extraction, Gram–Schmidt, explained variance.
//! - [`pas`]: coordinate training with adaptive search and corrected sampling.
//! - [`metrics`]: shared losses/norms, truncation-error curves, S-shape statistics.
//! - [`trajio`]: CSV and binary trajectory dumps.

pub mod error;
pub mod metrics;
pub mod pas;
pub mod rng;
pub mod scorefield;
pub mod solvers;
pub mod subspace;
pub mod timegrid;
pub mod trajio;

pub use error::{PasError, Result};

/// A state or direction in data space.
pub type Vector = nalgebra::DVector<f64>;

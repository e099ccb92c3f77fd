//! Flow matching on synthetic manifold targets.
//!
//! The crate trains a small MLP to regress the conditional velocity field of
//! the linear interpolation path between a standard Gaussian source and a
//! target distribution supported on (or near) a low-dimensional manifold,
//! then transports fresh source samples along the learned field with a
//! fixed-step ODE solver. Everything needed to reproduce and probe that
//! pipeline lives here:
//!
//! - [`nn`]: dense ReLU networks with exact reverse-mode gradients, AdamW,
//!   a cosine learning-rate schedule, and sinusoidal time embeddings.
//! - [`flow`]: interpolation-path training (loss, gradients, the training
//!   loop) and the clipped velocity model, single-net or per-slab piecewise.
//! - [`oracle`]: closed-form conditional velocity for atomic targets, a
//!   Monte Carlo estimator for general targets, and field-error probes.
//! - [`ode`]: Euler and RK4 integration on quadratic or uniform time grids
//!   with early stopping before the terminal time.
//! - [`data`]: sphere, rotated-torus, and floral-curve samplers plus the
//!   Gaussian source.
//! - [`metrics`]: standardized sliced 1-Wasserstein distance, closed-form
//!   distance-to-manifold, and exact 2-Wasserstein via optimal assignment.
//! - [`recipes`]: the fixed experiment configurations used by the CLI and
//!   the acceptance suite.
//!
//! Numeric code is generic over the scalar type via [`Scalar`]; experiments
//! and the CLI run entirely on [`Real`] (`f64`).

pub mod data;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod ode;
pub mod oracle;
pub mod recipes;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use scalar::Scalar;

/// Scalar type used by all experiments, tests, and the CLI.
pub type Real = f64;

/// Point cloud over the default scalar (one row per sample).
pub type RealMatrix = Matrix<Real>;

/// MLP over the default scalar.
pub type RealNet = nn::MlpNet<Real>;

/// Velocity model over the default scalar.
pub type RealModel = flow::VelocityModel<Real>;


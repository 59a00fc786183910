//! Prior-data conflict checking from prior-to-posterior Renyi divergences.
//!
//! The library computes how far a posterior has moved from its prior,
//! measured by a Renyi divergence of arbitrary order (with the
//! Kullback-Leibler and maximum-log-ratio limits as special cases), and
//! calibrates the observed value against its distribution under the prior
//! predictive for the data.  Small calibration p-values flag a prior that
//! puts most of its mass where the likelihood has little.
//!
//! The crate ships six ready-made models (normal location, binomial,
//! normal location-scale, a shifted-exponential non-regular model, an
//! overdispersed beta-binomial, and a logistic random-effects model),
//! hierarchical and cross-validated check variants, the large-data
//! limiting p-value, and variational Gaussian / Gaussian-mixture posterior
//! approximations for the non-conjugate models.

pub mod conflict;
pub mod dist;
pub mod divergence;
pub mod error;
pub mod models;
pub mod quad;
pub mod rng;
pub mod special;
pub mod variational;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

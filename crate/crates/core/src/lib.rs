//! Truncated enriched Dirichlet process mixtures (EDPM) for Bayesian
//! nonparametric regression.
//!
//! The crate is `no_std` (with `alloc`) and covers the numerical side:
//!
//! - [`model`]: square-breaking weights, prior draws, log-densities, `E(Y|X)`.
//! - [`truncation`]: truncation levels from an error budget and the bound
//!   they certify.
//! - [`vb`]: mean-field coordinate-ascent variational inference.
//! - [`gibbs`]: blocked Gibbs sampler.
//! - [`simgen`]: synthetic data generators.
//! - [`diagnostics`]: batch-means summaries.
//!
//! File formats, configuration and the command-line front end live in the
//! companion `edpm` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod diagnostics;
pub mod error;
pub mod gibbs;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod simgen;
pub mod special;
pub mod truncation;
pub mod vb;

pub use error::{Error, Result};
pub use model::{
    Assignments, AtomState, Dataset, EdpmState, GammaPrior, Hyperparams, StickState,
    TruncationLevels, WeightState,
};

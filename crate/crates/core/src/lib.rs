//! Multi-view latent-representation diagnosis pipeline.
//!
//! Three trained stages turn per-view feature tables into a binary
//! diagnosis:
//!
//! 1. [`latent`]: complete and structured latent codes for the training
//!    subjects, learned jointly with per-view reconstruction networks.
//! 2. [`regressor`]: a dense regressor from the concatenated features to the
//!    learned codes, so new subjects can be embedded.
//! 3. [`pipeline`]: a small classifier on the regressed codes, plus end-to-end
//!    training, prediction and persistence.
//!
//! [`baselines`] and [`eval`] provide the comparison classifiers and the
//! experiment harness; [`synth`] generates seeded multi-view benchmarks.

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod latent;
pub mod matrix;
pub mod nn;
pub mod persist;
pub mod pipeline;
pub mod regressor;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use matrix::Matrix;

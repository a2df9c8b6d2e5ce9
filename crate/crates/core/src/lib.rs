//! Generative interventions for causal learning, at desk scale.
//!
//! The crate synthesizes a confounded colored-digit benchmark, trains a
//! conditional VAE on it, steers the VAE latent space along principal
//! directions to manufacture interventional training data, and measures what
//! that buys: classifier accuracy when the spurious color cue is broken,
//! causal-effect bounds, and residual nuisance/label correlation.

pub mod error;
pub mod ndcore;

pub use error::{Error, Result};
pub mod datagen;
pub mod genmodel;
pub mod causal;
pub mod intervene;
pub mod classify;
pub mod cli;

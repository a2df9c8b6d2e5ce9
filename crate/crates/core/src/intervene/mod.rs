//! Latent-space steering: principal directions of the CVAE latent space,
//! the shift `h* = h + σ s′ r`, strategy sampling and interventional-set
//! generation.

pub mod basis;
pub mod generate;
pub mod strategy;

pub use basis::{
    apply_intervention, encode_means, fit_basis_from_latents, fit_latent_basis, fit_prior_basis, BasisSource, LatentBasis,
    OffsetMode,
};
pub use generate::{generate_interventional_set, transfer_intervention, InterventionRecord, LatentSource};
pub use strategy::{sample_strategy_draw, InterventionStrategy, StrategyDraw};

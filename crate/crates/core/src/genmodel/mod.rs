//! Conditional VAE: the generator whose latent space is steered to produce
//! interventional data.

pub mod cvae;
pub mod train;
pub mod truncated;

pub use cvae::{elbo_loss, one_hot, reparameterize, Cvae, CvaeArch, ElboReport};
pub use train::{heldout_neg_elbo, load_cvae, save_cvae, train_cvae, CvaeCheckpointMeta, CvaeConfig, CvaeFit, EpochLog};
pub use truncated::sample_truncated_gaussian;

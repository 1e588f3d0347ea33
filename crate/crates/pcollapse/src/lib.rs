//! Imperceptible l-infinity perturbations that collapse the posterior of a
//! VAE encoder, plus the training, metric, defense, and diagnostic machinery
//! needed to verify the collapse at desk scale.
//!
//! The pipeline: train (or load) a small convolutional VAE, run the
//! projected sign-gradient attack against its encoder posterior in either
//! the concentration (minimize, tiny target variance) or diffusion
//! (maximize, unit target variance) direction, then measure the damage with
//! posterior statistics, collapse verdicts, reconstruction comparisons, and
//! image-quality metrics — optionally through purification defenses.

pub mod attack;
pub mod dataset;
pub mod defenses;
pub mod diagnostics;
pub mod error;
mod filter;
pub mod image;
pub mod metrics;
pub mod oracle;
pub mod posterior;
pub mod vae;

pub use attack::{
    attack_batch, clip_valid, pca_attack, project_linf, AttackConfig, AttackDirection,
    AttackResult, DifferentiableEncoder, InLoopTransform,
};
pub use error::{Error, Result};
pub use image::ImageGrid;
pub use posterior::{
    collapse_loss, forward_kl_to_isotropic, kl_to_isotropic, loss_surface_grid, mse_criterion,
    Criterion, LossSurfaceGrid, PosteriorParams, TargetPrior,
};

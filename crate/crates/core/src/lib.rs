//! Hierarchical variational uncertainty estimation for image segmentation.
//!
//! A U-net whose skip connections carry per-level diagonal-Gaussian latents.
//! Training minimises a mixed reconstruction loss plus a β-weighted,
//! level-averaged KL between an image-conditioned latent branch and a
//! segmentation-conditioned one. At inference, latent draws give a set of
//! plausible segmentations whose pixel-wise variance serves as an
//! uncertainty map.
//!
//! Modules:
//! - [`latent`]: Gaussian fields, reparameterised sampling, per-level KL.
//! - [`network`]: encoder/decoder, latent heads, checkpoints.
//! - [`losses`]: cross-entropy, soft Dice and the β-weighted objective.
//! - [`metrics`]: GED², S_NCC, Dice, Hausdorff, uncertainty maps.
//! - [`data`]: dataset layout, toy benchmark, preprocessing, perturbations.
//! - [`harness`]: training loop, evaluation, exports, parameter accounting.

pub mod data;
pub mod error;
pub mod harness;
pub mod latent;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod resize;

pub use error::{Error, Result};

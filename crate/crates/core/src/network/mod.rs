//! The VAE U-net: a convolutional U-net whose skip connections carry
//! per-level Gaussian latents.
//!
//! Two encoders share one topology. The image encoder feeds the decoder and
//! the image-conditioned latent heads (`q`). The segmentation encoder exists
//! only at training time and feeds the segmentation-conditioned heads (`p`)
//! that supply KL targets. Latent level `i` conditions on the sample drawn at
//! level `i − 1`, average-pooled to level `i`'s resolution.

mod checkpoint;
mod config;
mod layers;
mod model;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use layers::{Backbone, ConvBlock, ConvEncoder, Conv2d, ConvTranspose2d, LatentHead};
pub use model::{ForwardTrace, LatentSampling, SkipFeatures, VaeUnet};
pub use params::ParamStore;

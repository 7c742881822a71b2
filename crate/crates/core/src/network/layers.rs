use candle_core::Tensor;

use super::params::ParamStore;
use crate::latent::DiagonalGaussianField;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
}

impl Conv2d {
    /// He-normal weights, zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Result<Self> {
        let fan_in = (in_channels * kernel * kernel) as f64;
        Self::with_std(store, name, in_channels, out_channels, kernel, (2.0 / fan_in).sqrt())
    }

    pub fn with_std(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        std: f64,
    ) -> Result<Self> {
        let weight = store.normal(
            &format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            std,
        )?;
        let bias = store.zeros(&format!("{name}.bias"), &[out_channels])?;
        Ok(Self {
            weight,
            bias,
            padding: kernel / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, 1, 1, 1)?;
        let b = self.bias.reshape((1, self.bias.dim(0)?, 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }
}

/// 2×2 stride-2 transposed convolution (exact 2× upsampling).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Tensor,
    bias: Tensor,
}

impl ConvTranspose2d {
    pub fn new(store: &mut ParamStore, name: &str, in_channels: usize, out_channels: usize) -> Result<Self> {
        let weight = store.normal(
            &format!("{name}.weight"),
            &[in_channels, out_channels, 2, 2],
            (1.0 / in_channels as f64).sqrt(),
        )?;
        let bias = store.zeros(&format!("{name}.bias"), &[out_channels])?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(&self.weight, 0, 0, 2, 1)?;
        let b = self.bias.reshape((1, self.bias.dim(0)?, 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

/// Two 3×3 convolutions, each followed by a ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ConvBlock {
    pub fn new(store: &mut ParamStore, name: &str, in_channels: usize, out_channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), in_channels, out_channels, 3)?,
            conv2: Conv2d::new(store, &format!("{name}.conv2"), out_channels, out_channels, 3)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(x)?.relu()?;
        Ok(self.conv2.forward(&h)?.relu()?)
    }
}

/// Feature extractor producing one skip tensor per resolution level,
/// level `i` at `input / 2^i`.
pub trait Backbone: std::fmt::Debug + Send + Sync {
    fn encode(&self, x: &Tensor) -> Result<Vec<Tensor>>;
}

/// Plain U-net encoder: a [`ConvBlock`] per level, max-pooling between levels.
#[derive(Debug, Clone)]
pub struct ConvEncoder {
    blocks: Vec<ConvBlock>,
}

impl ConvEncoder {
    pub fn new(store: &mut ParamStore, name: &str, in_channels: usize, channels: &[usize]) -> Result<Self> {
        let mut blocks = Vec::with_capacity(channels.len());
        let mut prev = in_channels;
        for (i, &c) in channels.iter().enumerate() {
            blocks.push(ConvBlock::new(store, &format!("{name}.level{i}"), prev, c)?);
            prev = c;
        }
        Ok(Self { blocks })
    }
}

impl Backbone for ConvEncoder {
    fn encode(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut skips = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                h = max_pool2(&h)?;
            }
            h = block.forward(&h)?;
            skips.push(h.clone());
        }
        Ok(skips)
    }
}

/// 1×1 convolution mapping a skip feature map (plus the pooled ancestor
/// latent, when present) to pixel-wise mean and log-variance maps.
#[derive(Debug, Clone)]
pub struct LatentHead {
    conv: Conv2d,
    latent_channels: usize,
    conditioned: bool,
}

impl LatentHead {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        feature_channels: usize,
        latent_channels: usize,
        conditioned: bool,
    ) -> Result<Self> {
        let in_channels = feature_channels + if conditioned { latent_channels } else { 0 };
        let conv = Conv2d::with_std(
            store,
            name,
            in_channels,
            2 * latent_channels,
            1,
            (1.0 / in_channels as f64).sqrt(),
        )?;
        Ok(Self {
            conv,
            latent_channels,
            conditioned,
        })
    }

    /// `prev_latent` is the sample from the previous (finer) level; it is
    /// average-pooled down to this level's resolution before use.
    pub fn forward(&self, features: &Tensor, prev_latent: Option<&Tensor>) -> Result<DiagonalGaussianField> {
        let input = match (self.conditioned, prev_latent) {
            (false, None) => features.clone(),
            (true, Some(z)) => {
                let (_, _, h, w) = features.dims4()?;
                let (_, _, zh, zw) = z.dims4()?;
                let z = if (zh, zw) == (h, w) {
                    z.clone()
                } else if (zh, zw) == (2 * h, 2 * w) {
                    z.avg_pool2d(2)?
                } else {
                    return Err(Error::shape("latent head ancestor", &[2 * h, 2 * w], &[zh, zw]));
                };
                Tensor::cat(&[features, &z], 1)?
            }
            (false, Some(_)) => {
                return Err(Error::invalid("the first latent level has no ancestor"));
            }
            (true, None) => {
                return Err(Error::invalid("latent head requires the previous level's sample"));
            }
        };
        let out = self.conv.forward(&input)?;
        let lc = self.latent_channels;
        let mean = out.narrow(1, 0, lc)?;
        let log_var = out.narrow(1, lc, lc)?;
        DiagonalGaussianField::from_head(mean, log_var)
    }

    pub fn conv(&self) -> &Conv2d {
        &self.conv
    }
}

/// 2×2 max-pool built from a reshape and two max reductions. Candle's
/// `max_pool2d` scales its gradient by the share of tied maxima instead of
/// dividing by it, which leaves untied windows with a quarter of the gradient.
/// Odd trailing rows and columns are dropped.
pub fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let x = x.narrow(2, 0, h / 2 * 2)?.narrow(3, 0, w / 2 * 2)?.contiguous()?;
    Ok(x.reshape((b, c, h / 2, 2, w / 2, 2))?.max(5)?.max(3)?)
}

/// Bilinear resize of `[b, c, h, w]` to `[b, c, out_h, out_w]` by two
/// matrix products; differentiable.
pub fn resize_bilinear(x: &Tensor, out: [usize; 2]) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if [h, w] == out {
        return Ok(x.clone());
    }
    let dev = x.device();
    let rows = Tensor::from_vec(crate::resize::bilinear_matrix(h, out[0]), (out[0], h), dev)?
        .to_dtype(x.dtype())?;
    let cols = Tensor::from_vec(crate::resize::bilinear_matrix(w, out[1]), (out[1], w), dev)?
        .to_dtype(x.dtype())?
        .t()?
        .contiguous()?;
    let y = rows.broadcast_matmul(&x.contiguous()?)?;
    Ok(y.broadcast_matmul(&cols)?)
}

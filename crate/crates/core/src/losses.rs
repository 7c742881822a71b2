//! Training objective: `ce_weight · CE + dice_weight · Dice + β · KL`.
//!
//! The KL term is the level-reduced value carried by the forward trace.
//! Inputs are `[batch, classes, h, w]` logits and one-hot targets.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::latent::scalar_value;
use crate::network::ForwardTrace;
use crate::{Error, Result};

/// Smoothing constant of the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub beta: f64,
    pub ce_weight: f64,
    pub dice_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            ce_weight: 0.4,
            dice_weight: 0.6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !(self.ce_weight >= 0.0) || !(self.dice_weight >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

fn check_pair(logits: &Tensor, target: &Tensor) -> Result<()> {
    if logits.dims() != target.dims() || logits.rank() != 4 {
        return Err(Error::shape("loss inputs", logits.dims(), target.dims()));
    }
    Ok(())
}

/// Mean over pixels of `−Σ_c y_c log softmax(logits)_c`.
pub fn cross_entropy_loss(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_pair(logits, target)?;
    let probe = scalar_value(&logits.abs()?.max_all()?)?;
    if !probe.is_finite() {
        return Err(Error::invalid("cross entropy received non-finite logits"));
    }
    let (b, _, h, w) = logits.dims4()?;
    let log_p = candle_nn::ops::log_softmax(logits, 1)?;
    let target = target.to_dtype(logits.dtype())?;
    let total = (log_p * target)?.sum_all()?.neg()?;
    Ok((total / (b * h * w) as f64)?)
}

/// `1 −` mean over foreground classes of the smoothed soft Dice ratio.
/// Sums run over the whole batch.
pub fn dice_loss(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_pair(logits, target)?;
    let k = logits.dim(1)?;
    let p = candle_nn::ops::softmax(logits, 1)?.narrow(1, 1, k - 1)?;
    let y = target.to_dtype(logits.dtype())?.narrow(1, 1, k - 1)?;
    // per class: sum over batch and space
    let per_class = |t: Tensor| -> candle_core::Result<Tensor> { t.transpose(0, 1)?.flatten_from(1)?.sum(1) };
    let inter = per_class((&p * &y)?)?;
    let denom = (per_class(p)? + per_class(y)?)?;
    let ratio = (((inter * 2.0)? + DICE_SMOOTH)? / (denom + DICE_SMOOTH)?)?;
    Ok((1.0 - ratio.mean_all()?)?)
}

/// Each weighted term and their sum, as differentiable tensors.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: Tensor,
    pub cross_entropy: Tensor,
    pub dice: Tensor,
    pub kl: Tensor,
}

/// Plain-number copy of a [`LossBreakdown`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub cross_entropy: f64,
    pub dice: f64,
    pub kl: f64,
    /// `ce_weight·CE + dice_weight·Dice + β·KL` evaluated in f64.
    pub weighted_sum: f64,
}

impl LossBreakdown {
    pub fn values(&self, cfg: &LossConfig) -> Result<LossValues> {
        let cross_entropy = scalar_value(&self.cross_entropy)?;
        let dice = scalar_value(&self.dice)?;
        let kl = scalar_value(&self.kl)?;
        Ok(LossValues {
            total: scalar_value(&self.total)?,
            cross_entropy,
            dice,
            kl,
            weighted_sum: cfg.ce_weight * cross_entropy + cfg.dice_weight * dice + cfg.beta * kl,
        })
    }
}

/// Negated ELBO with the mixed reconstruction surrogate.
pub fn elbo_loss(trace: &ForwardTrace, target: &Tensor, cfg: &LossConfig) -> Result<LossBreakdown> {
    weighted_loss(&trace.logits, target, trace.kl.reduced(), cfg)
}

/// Same as [`elbo_loss`] with the pieces supplied directly.
pub fn weighted_loss(logits: &Tensor, target: &Tensor, kl: &Tensor, cfg: &LossConfig) -> Result<LossBreakdown> {
    let cross_entropy = cross_entropy_loss(logits, target)?;
    let dice = dice_loss(logits, target)?;
    let kl = kl.to_dtype(logits.dtype())?;
    let total = (((&cross_entropy * cfg.ce_weight)? + (&dice * cfg.dice_weight)?)? + (&kl * cfg.beta)?)?;
    Ok(LossBreakdown {
        total,
        cross_entropy,
        dice,
        kl,
    })
}

//! Per-level diagonal-Gaussian latents.
//!
//! Every tensor here is laid out `[batch, channels, height, width]`. KL terms
//! are summed over channels and averaged over batch and spatial positions, so
//! a level's KL does not grow with its resolution.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Range that head-produced log-variances are clamped to.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Pixel-wise mean and log-variance maps parameterising one latent level.
#[derive(Debug, Clone)]
pub struct DiagonalGaussianField {
    mean: Tensor,
    log_var: Tensor,
}

impl DiagonalGaussianField {
    /// Builds a field from already-valid parameters. Shapes must agree.
    pub fn new(mean: Tensor, log_var: Tensor) -> Result<Self> {
        if mean.dims() != log_var.dims() {
            return Err(Error::shape("gaussian field", mean.dims(), log_var.dims()));
        }
        if mean.rank() != 4 {
            return Err(Error::invalid(format!(
                "gaussian field must be [batch, channels, h, w], got rank {}",
                mean.rank()
            )));
        }
        Ok(Self { mean, log_var })
    }

    /// Builds a field from raw head outputs, clamping the log-variance.
    pub fn from_head(mean: Tensor, raw_log_var: Tensor) -> Result<Self> {
        let log_var = raw_log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX)?;
        Self::new(mean, log_var)
    }

    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    pub fn log_var(&self) -> &Tensor {
        &self.log_var
    }

    pub fn dims(&self) -> &[usize] {
        self.mean.dims()
    }

    /// Number of averaged positions (batch × height × width).
    fn position_count(&self) -> usize {
        let d = self.dims();
        d[0] * d[2] * d[3]
    }
}

/// Closed-form KL[q ‖ p] between two diagonal Gaussian fields, in nats.
///
/// Summed over channels, averaged over batch and spatial positions.
pub fn gaussian_kl(q: &DiagonalGaussianField, p: &DiagonalGaussianField) -> Result<Tensor> {
    if q.dims() != p.dims() {
        return Err(Error::shape("gaussian_kl", p.dims(), q.dims()));
    }
    let var_q = q.log_var.exp()?;
    let inv_var_p = p.log_var.neg()?.exp()?;
    let diff = (&q.mean - &p.mean)?;
    // log(σp/σq) = (log σp² − log σq²)/2
    let log_ratio = ((&p.log_var - &q.log_var)? * 0.5)?;
    let quad = ((var_q + diff.sqr()?)? * inv_var_p)?;
    let elem = ((log_ratio + (quad * 0.5)?)? - 0.5)?;
    let total = elem.sum_all()?;
    Ok((total / q.position_count() as f64)?)
}

/// Reparameterised draw `mean + exp(log_var / 2) ⊙ noise`.
pub fn sample_latent(g: &DiagonalGaussianField, noise: &Tensor) -> Result<Tensor> {
    if noise.dims() != g.dims() {
        return Err(Error::shape("sample_latent noise", g.dims(), noise.dims()));
    }
    let std = (g.log_var() * 0.5)?.exp()?;
    Ok(g.mean().broadcast_add(&(std * noise)?)?)
}

/// The deterministic latent used in prior mode.
pub fn mean_latent(g: &DiagonalGaussianField) -> Tensor {
    g.mean().clone()
}

/// How per-level KL terms collapse to one scalar.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlReduction {
    #[default]
    Mean,
    Sum,
}

/// Per-level KL terms and their reduction.
#[derive(Debug, Clone)]
pub struct KlReport {
    per_level: Vec<Tensor>,
    reduced: Tensor,
}

impl KlReport {
    /// Scalar tensors, one per level; differentiable.
    pub fn per_level(&self) -> &[Tensor] {
        &self.per_level
    }

    /// Reduced scalar tensor; differentiable.
    pub fn reduced(&self) -> &Tensor {
        &self.reduced
    }

    pub fn per_level_values(&self) -> Result<Vec<f64>> {
        self.per_level.iter().map(scalar_value).collect()
    }

    pub fn reduced_value(&self) -> Result<f64> {
        scalar_value(&self.reduced)
    }
}

pub(crate) fn scalar_value(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Per-level KL between the image-conditioned and segmentation-conditioned
/// hierarchies. Both lists must already be conditioned on the same sampled
/// ancestors; this only evaluates the closed-form term at each level.
pub fn hierarchical_kl(
    q_levels: &[DiagonalGaussianField],
    p_levels: &[DiagonalGaussianField],
    reduction: KlReduction,
) -> Result<KlReport> {
    if q_levels.len() != p_levels.len() {
        return Err(Error::shape(
            "hierarchical_kl level count",
            &[p_levels.len()],
            &[q_levels.len()],
        ));
    }
    if q_levels.is_empty() {
        return Err(Error::invalid("hierarchical_kl needs at least one level"));
    }
    let per_level = q_levels
        .iter()
        .zip(p_levels)
        .map(|(q, p)| gaussian_kl(q, p))
        .collect::<Result<Vec<_>>>()?;
    let sum = Tensor::stack(&per_level, 0)?.sum_all()?;
    let reduced = match reduction {
        KlReduction::Sum => sum,
        KlReduction::Mean => (sum / per_level.len() as f64)?,
    };
    Ok(KlReport { per_level, reduced })
}

/// Ordered per-level latent samples, finest level first.
#[derive(Debug, Clone)]
pub struct LatentStack {
    levels: Vec<Tensor>,
}

impl LatentStack {
    pub fn new(levels: Vec<Tensor>) -> Self {
        Self { levels }
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn get(&self, level: usize) -> Option<&Tensor> {
        self.levels.get(level)
    }
}

/// Source of standard-normal noise for latent sampling.
pub trait NoiseSource {
    fn standard_normal(&mut self, shape: &[usize], dtype: DType, device: &Device) -> Result<Tensor>;
}

/// Seeded standard-normal noise; identical seeds give identical streams.
#[derive(Debug, Clone)]
pub struct SeededNoise {
    rng: ChaCha8Rng,
}

impl SeededNoise {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl NoiseSource for SeededNoise {
    fn standard_normal(&mut self, shape: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| StandardNormal.sample(&mut self.rng))
            .collect();
        Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
    }
}

/// All-zero noise: sampling collapses onto the mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn standard_normal(&mut self, shape: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(Tensor::zeros(shape, dtype, device)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(mean: &[f64], log_var: &[f64], shape: (usize, usize, usize, usize)) -> DiagonalGaussianField {
        let dev = Device::Cpu;
        DiagonalGaussianField::new(
            Tensor::from_slice(mean, shape, &dev).unwrap(),
            Tensor::from_slice(log_var, shape, &dev).unwrap(),
        )
        .unwrap()
    }

    fn kl_value(q: &DiagonalGaussianField, p: &DiagonalGaussianField) -> f64 {
        scalar_value(&gaussian_kl(q, p).unwrap()).unwrap()
    }

    #[test]
    fn kl_of_identical_fields_is_zero() {
        let q = field(&[0.3, -1.0, 2.0, 0.5], &[0.1, -2.0, 1.5, 0.0], (1, 1, 2, 2));
        assert!(kl_value(&q, &q).abs() < 1e-12);
    }

    #[test]
    fn kl_unit_mean_shift() {
        let q = field(&[1.0], &[0.0], (1, 1, 1, 1));
        let p = field(&[0.0], &[0.0], (1, 1, 1, 1));
        assert!((kl_value(&q, &p) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_variance_e() {
        let q = field(&[0.0], &[1.0], (1, 1, 1, 1));
        let p = field(&[0.0], &[0.0], (1, 1, 1, 1));
        let expected = (std::f64::consts::E - 2.0) / 2.0;
        assert!((kl_value(&q, &p) - expected).abs() < 1e-12);
        assert!((expected - 0.35914).abs() < 1e-5);
    }

    #[test]
    fn kl_sums_channels_and_averages_positions() {
        // two channels, two positions; only one element differs
        let q = field(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4], (1, 2, 1, 2));
        let p = field(&[0.0; 4], &[0.0; 4], (1, 2, 1, 2));
        assert!((kl_value(&q, &p) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn kl_rejects_shape_mismatch() {
        let q = field(&[0.0; 4], &[0.0; 4], (1, 1, 2, 2));
        let p = field(&[0.0; 4], &[0.0; 4], (1, 4, 1, 1));
        assert!(matches!(gaussian_kl(&q, &p), Err(Error::Shape { .. })));
    }

    #[test]
    fn field_rejects_mismatched_parameters() {
        let dev = Device::Cpu;
        let m = Tensor::zeros((1, 1, 2, 2), DType::F64, &dev).unwrap();
        let v = Tensor::zeros((1, 1, 2, 3), DType::F64, &dev).unwrap();
        assert!(DiagonalGaussianField::new(m, v).is_err());
    }

    #[test]
    fn head_output_is_clamped() {
        let dev = Device::Cpu;
        let m = Tensor::zeros((1, 1, 1, 2), DType::F64, &dev).unwrap();
        let v = Tensor::from_slice(&[-50.0f64, 50.0], (1, 1, 1, 2), &dev).unwrap();
        let g = DiagonalGaussianField::from_head(m, v).unwrap();
        let lv: Vec<f64> = g.log_var().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(lv, vec![LOG_VAR_MIN, LOG_VAR_MAX]);
    }

    #[test]
    fn sample_identity_and_floor_cases() {
        let dev = Device::Cpu;
        let eps = Tensor::from_slice(&[0.7f64, -1.3], (1, 1, 1, 2), &dev).unwrap();
        let unit = field(&[0.0, 0.0], &[0.0, 0.0], (1, 1, 1, 2));
        let z: Vec<f64> = sample_latent(&unit, &eps).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(z, vec![0.7, -1.3]);

        let tight = field(&[2.0, -3.0], &[LOG_VAR_MIN, LOG_VAR_MIN], (1, 1, 1, 2));
        let z: Vec<f64> = sample_latent(&tight, &eps).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!((z[0] - 2.0).abs() < 1e-2 && (z[1] + 3.0).abs() < 1e-2);
    }

    #[test]
    fn mean_latent_matches_zero_noise_sample() {
        let g = field(&[0.2, 0.4, -0.1, 3.0], &[1.0, -1.0, 0.5, 2.0], (1, 1, 2, 2));
        let zero = ZeroNoise
            .standard_normal(g.dims(), DType::F64, &Device::Cpu)
            .unwrap();
        let a: Vec<f64> = mean_latent(&g).flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f64> = sample_latent(&g, &zero).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
        let again: Vec<f64> = mean_latent(&g).flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn sample_rejects_noise_shape_mismatch() {
        let g = field(&[0.0; 4], &[0.0; 4], (1, 1, 2, 2));
        let noise = Tensor::zeros((1, 1, 4, 1), DType::F64, &Device::Cpu).unwrap();
        assert!(sample_latent(&g, &noise).is_err());
    }

    #[test]
    fn hierarchical_reductions() {
        let a = field(&[1.0], &[0.0], (1, 1, 1, 1));
        let b = field(&[0.0], &[0.0], (1, 1, 1, 1));
        let c = field(&[0.0], &[1.0], (1, 1, 1, 1));
        let mean = hierarchical_kl(&[a.clone(), c.clone()], &[b.clone(), b.clone()], KlReduction::Mean).unwrap();
        let levels = mean.per_level_values().unwrap();
        assert!((levels[0] - 0.5).abs() < 1e-12);
        assert!((mean.reduced_value().unwrap() - (levels[0] + levels[1]) / 2.0).abs() < 1e-15);
        let sum = hierarchical_kl(&[a, c], &[b.clone(), b], KlReduction::Sum).unwrap();
        assert!((sum.reduced_value().unwrap() - (levels[0] + levels[1])).abs() < 1e-15);
    }

    #[test]
    fn hierarchical_rejects_length_mismatch() {
        let a = field(&[0.0], &[0.0], (1, 1, 1, 1));
        assert!(hierarchical_kl(&[a.clone(), a.clone()], &[a], KlReduction::Mean).is_err());
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let dev = Device::Cpu;
        let a: Vec<f32> = SeededNoise::new(7)
            .standard_normal(&[2, 3], DType::F32, &dev)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let b: Vec<f32> = SeededNoise::new(7)
            .standard_normal(&[2, 3], DType::F32, &dev)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert_eq!(a, b);
    }
}

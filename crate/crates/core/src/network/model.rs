use candle_core::{DType, Device, Tensor};
use ndarray::Array2;

use super::config::ModelConfig;
use super::layers::{resize_bilinear, Backbone, ConvBlock, ConvEncoder, ConvTranspose2d, Conv2d, LatentHead};
use super::params::ParamStore;
use crate::latent::{
    hierarchical_kl, mean_latent, sample_latent, DiagonalGaussianField, KlReport, LatentStack, NoiseSource,
    SeededNoise,
};
use crate::metrics::{LabelMap, SampleSet};
use crate::{Error, Result};

/// Encoder feature maps, finest level first.
#[derive(Debug, Clone)]
pub struct SkipFeatures {
    levels: Vec<Tensor>,
}

impl SkipFeatures {
    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    fn repeat_batch(&self, n: usize) -> Result<Self> {
        let levels = self
            .levels
            .iter()
            .map(|t| t.repeat((n, 1, 1, 1)))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Self { levels })
    }
}

/// Everything produced by one training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Tensor,
    pub q_levels: Vec<DiagonalGaussianField>,
    pub p_levels: Vec<DiagonalGaussianField>,
    pub latents: LatentStack,
    pub kl: KlReport,
}

/// How the image branch turns its Gaussian fields into latents.
pub enum LatentSampling<'a> {
    Mean,
    Noise(&'a mut dyn NoiseSource),
}

#[derive(Debug)]
struct Decoder {
    bottom: ConvBlock,
    up: Vec<ConvTranspose2d>,
    blocks: Vec<ConvBlock>,
    classifier: Conv2d,
}

/// Samples decoded per batch in [`VaeUnet::predict_samples`].
const SAMPLE_CHUNK: usize = 16;

#[derive(Debug)]
pub struct VaeUnet {
    cfg: ModelConfig,
    params: ParamStore,
    image_encoder: ConvEncoder,
    segmentation_encoder: ConvEncoder,
    q_heads: Vec<LatentHead>,
    p_heads: Vec<LatentHead>,
    decoder: Decoder,
}

impl VaeUnet {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        Self::with_dtype(cfg, seed, DType::F32, Device::Cpu)
    }

    pub fn with_dtype(cfg: ModelConfig, seed: u64, dtype: DType, device: Device) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(seed, dtype, device);
        let ch = cfg.encoder_channels.clone();
        let lc = cfg.latent_channels;
        let top = cfg.level_count - 1;

        let image_encoder = ConvEncoder::new(&mut ps, "image_encoder", cfg.in_channels, &ch)?;
        let segmentation_encoder = ConvEncoder::new(&mut ps, "segmentation_encoder", cfg.class_count, &ch)?;
        let mut q_heads = Vec::with_capacity(cfg.level_count);
        let mut p_heads = Vec::with_capacity(cfg.level_count);
        for (i, &c) in ch.iter().enumerate() {
            q_heads.push(LatentHead::new(&mut ps, &format!("q_heads.level{i}"), c, lc, i > 0)?);
            p_heads.push(LatentHead::new(&mut ps, &format!("p_heads.level{i}"), c, lc, i > 0)?);
        }

        let bottom = ConvBlock::new(&mut ps, &format!("decoder.level{top}"), ch[top] + lc, ch[top])?;
        let mut up = Vec::with_capacity(top);
        let mut blocks = Vec::with_capacity(top);
        for i in 0..top {
            up.push(ConvTranspose2d::new(&mut ps, &format!("decoder.up{i}"), ch[i + 1], ch[i])?);
            blocks.push(ConvBlock::new(&mut ps, &format!("decoder.level{i}"), 2 * ch[i] + lc, ch[i])?);
        }
        let classifier = Conv2d::with_std(
            &mut ps,
            "classifier",
            ch[0],
            cfg.class_count,
            1,
            (1.0 / ch[0] as f64).sqrt(),
        )?;

        Ok(Self {
            cfg,
            params: ps,
            image_encoder,
            segmentation_encoder,
            q_heads,
            p_heads,
            decoder: Decoder {
                bottom,
                up,
                blocks,
                classifier,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    fn check_input(&self, x: &Tensor) -> Result<Tensor> {
        let [h, w] = self.cfg.input_size;
        let dims = x.dims();
        if dims.len() != 4 || dims[1] != self.cfg.in_channels || dims[2] != h || dims[3] != w {
            let batch = dims.first().copied().unwrap_or(1);
            return Err(Error::shape("image input", &[batch, self.cfg.in_channels, h, w], dims));
        }
        Ok(x.to_dtype(self.dtype())?)
    }

    /// Runs the image encoder. Level `i` features are at `input / 2^i`.
    pub fn encode_image(&self, x: &Tensor) -> Result<SkipFeatures> {
        let x = self.check_input(x)?;
        Ok(SkipFeatures {
            levels: self.image_encoder.encode(&x)?,
        })
    }

    /// Image-conditioned latent head at `level`.
    pub fn latent_head(
        &self,
        level: usize,
        features: &Tensor,
        prev_latent: Option<&Tensor>,
    ) -> Result<DiagonalGaussianField> {
        let head = self
            .q_heads
            .get(level)
            .ok_or_else(|| Error::invalid(format!("no latent level {level}")))?;
        head.forward(features, prev_latent)
    }

    /// Walks the image branch from the finest level down, drawing each
    /// latent before computing the next level's parameters.
    pub fn image_latents(
        &self,
        skips: &SkipFeatures,
        mut sampling: LatentSampling<'_>,
    ) -> Result<(Vec<DiagonalGaussianField>, LatentStack)> {
        let mut fields = Vec::with_capacity(self.cfg.level_count);
        let mut latents: Vec<Tensor> = Vec::with_capacity(self.cfg.level_count);
        for (i, feat) in skips.levels.iter().enumerate() {
            let field = self.latent_head(i, feat, latents.last())?;
            let z = match &mut sampling {
                LatentSampling::Mean => mean_latent(&field),
                LatentSampling::Noise(noise) => {
                    let eps = noise.standard_normal(field.dims(), self.dtype(), self.device())?;
                    sample_latent(&field, &eps)?
                }
            };
            fields.push(field);
            latents.push(z);
        }
        Ok((fields, LatentStack::new(latents)))
    }

    fn check_one_hot(&self, y: &Tensor) -> Result<Tensor> {
        let [h, w] = self.cfg.output_size;
        let dims = y.dims();
        let k = self.cfg.class_count;
        if dims.len() != 4 || dims[1] != k || dims[2] != h || dims[3] != w {
            let batch = dims.first().copied().unwrap_or(1);
            return Err(Error::shape("one-hot segmentation", &[batch, k, h, w], dims));
        }
        let y = y.to_dtype(DType::F64)?;
        let binary = (&y * (1.0 - &y)?)?.abs()?.max_all()?.to_scalar::<f64>()?;
        let sums = (y.sum_keepdim(1)? - 1.0)?.abs()?.max_all()?.to_scalar::<f64>()?;
        if binary != 0.0 || sums != 0.0 {
            return Err(Error::invalid("segmentation tensor is not one-hot over classes"));
        }
        Ok(y.to_dtype(self.dtype())?)
    }

    /// Segmentation-conditioned fields, conditioned on the image branch's
    /// samples so both hierarchies share ancestors.
    pub fn encode_segmentation(&self, y: &Tensor, q_latents: &LatentStack) -> Result<Vec<DiagonalGaussianField>> {
        let y = self.check_one_hot(y)?;
        let y = resize_bilinear(&y, self.cfg.input_size)?;
        if q_latents.len() != self.cfg.level_count {
            return Err(Error::shape(
                "segmentation branch latents",
                &[self.cfg.level_count],
                &[q_latents.len()],
            ));
        }
        let feats = self.segmentation_encoder.encode(&y)?;
        feats
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let prev = if i == 0 { None } else { q_latents.get(i - 1) };
                self.p_heads[i].forward(f, prev)
            })
            .collect()
    }

    /// Decoder: latents are concatenated with the skip features at their
    /// native resolution, then the usual U-net upsampling path.
    pub fn decode(&self, skips: &SkipFeatures, latents: &LatentStack) -> Result<Tensor> {
        let n = self.cfg.level_count;
        if skips.levels.len() != n || latents.len() != n {
            return Err(Error::shape("decoder levels", &[n, n], &[skips.levels.len(), latents.len()]));
        }
        for (s, z) in skips.levels.iter().zip(latents.levels()) {
            let (sb, _, sh, sw) = s.dims4()?;
            let (zb, zc, zh, zw) = z.dims4()?;
            if (sb, sh, sw, zc) != (zb, zh, zw, self.cfg.latent_channels) {
                return Err(Error::shape(
                    "latent vs skip",
                    &[sb, self.cfg.latent_channels, sh, sw],
                    &[zb, zc, zh, zw],
                ));
            }
        }
        let top = n - 1;
        let z = latents.levels();
        let mut h = self
            .decoder
            .bottom
            .forward(&Tensor::cat(&[&skips.levels[top], &z[top]], 1)?)?;
        for i in (0..top).rev() {
            let up = self.decoder.up[i].forward(&h)?;
            h = self.decoder.blocks[i].forward(&Tensor::cat(&[&up, &skips.levels[i], &z[i]], 1)?)?;
        }
        let h = resize_bilinear(&h, self.cfg.output_size)?;
        self.decoder.classifier.forward(&h)
    }

    /// One training pass: latents drawn from the image branch feed the
    /// decoder; the segmentation branch supplies the KL targets.
    pub fn forward_train(&self, x: &Tensor, y: &Tensor, noise: &mut dyn NoiseSource) -> Result<ForwardTrace> {
        let skips = self.encode_image(x)?;
        if y.dim(0)? != x.dim(0)? {
            return Err(Error::shape("batch size", &[x.dim(0)?], &[y.dim(0)?]));
        }
        let (q_levels, latents) = self.image_latents(&skips, LatentSampling::Noise(noise))?;
        let p_levels = self.encode_segmentation(y, &latents)?;
        let kl = hierarchical_kl(&q_levels, &p_levels, self.cfg.kl_reduction)?;
        let logits = self.decode(&skips, &latents)?;
        Ok(ForwardTrace {
            logits,
            q_levels,
            p_levels,
            latents,
            kl,
        })
    }

    /// Logits from mean latents at every level.
    pub fn prior_logits(&self, x: &Tensor) -> Result<Tensor> {
        let skips = self.encode_image(x)?;
        let (_, latents) = self.image_latents(&skips, LatentSampling::Mean)?;
        self.decode(&skips, &latents)
    }

    /// Image-branch fields under mean conditioning.
    pub fn prior_fields(&self, x: &Tensor) -> Result<Vec<DiagonalGaussianField>> {
        let skips = self.encode_image(x)?;
        Ok(self.image_latents(&skips, LatentSampling::Mean)?.0)
    }

    /// Deterministic prediction from mean latents, one map per batch item.
    pub fn predict_prior(&self, x: &Tensor) -> Result<Vec<LabelMap>> {
        argmax_maps(&self.prior_logits(x)?)
    }

    /// `n` segmentations of a single image, each from an independent
    /// latent draw.
    pub fn predict_samples(&self, x: &Tensor, n: usize, seed: u64) -> Result<SampleSet> {
        self.predict_samples_with(x, n, &mut SeededNoise::new(seed))
    }

    pub fn predict_samples_with(&self, x: &Tensor, n: usize, noise: &mut dyn NoiseSource) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        if x.dims().first() != Some(&1) {
            return Err(Error::invalid("predict_samples expects a batch of one image"));
        }
        let skips = self.encode_image(x)?;
        let mut samples = Vec::with_capacity(n);
        let mut remaining = n;
        while remaining > 0 {
            let k = remaining.min(SAMPLE_CHUNK);
            let rep = skips.repeat_batch(k)?;
            let (_, latents) = self.image_latents(&rep, LatentSampling::Noise(&mut *noise))?;
            samples.extend(argmax_maps(&self.decode(&rep, &latents)?)?);
            remaining -= k;
        }
        SampleSet::new(samples)
    }

    /// Zeroes weights and biases of both latent-head branches.
    pub fn zero_latent_heads(&self) -> Result<()> {
        for (name, var) in self.params.iter() {
            if name.starts_with("q_heads.") || name.starts_with("p_heads.") {
                self.params.assign(name, &var.zeros_like()?)?;
            }
        }
        Ok(())
    }

    /// Pins every image-branch log-variance to the clamp floor, making
    /// sampling (numerically) deterministic.
    pub fn collapse_image_variance(&self) -> Result<()> {
        let lc = self.cfg.latent_channels;
        for (i, head) in self.q_heads.iter().enumerate() {
            let w = head.conv().weight();
            let keep = w.narrow(0, 0, lc)?;
            let weight = Tensor::cat(&[&keep, &w.narrow(0, lc, lc)?.zeros_like()?], 0)?;
            let b = head.conv().bias();
            let floor = (b.narrow(0, lc, lc)?.ones_like()? * -1.0e4)?;
            let bias = Tensor::cat(&[&b.narrow(0, 0, lc)?, &floor], 0)?;
            self.params.assign(&format!("q_heads.level{i}.weight"), &weight)?;
            self.params.assign(&format!("q_heads.level{i}.bias"), &bias)?;
        }
        Ok(())
    }
}

/// Arg-max over the class axis of `[b, k, h, w]` logits.
pub(crate) fn argmax_maps(logits: &Tensor) -> Result<Vec<LabelMap>> {
    let (b, _, h, w) = logits.dims4()?;
    let idx = logits.argmax(1)?.to_dtype(DType::U32)?;
    let flat: Vec<u32> = idx.flatten_all()?.to_vec1()?;
    Ok(flat
        .chunks(h * w)
        .take(b)
        .map(|c| Array2::from_shape_fn((h, w), |(r, q)| c[r * w + q] as u8))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::ZeroNoise;

    fn toy(levels: usize, size: usize) -> ModelConfig {
        ModelConfig {
            level_count: levels,
            encoder_channels: (0..levels).map(|i| 4 << i).collect(),
            latent_channels: 2,
            class_count: 2,
            in_channels: 1,
            input_size: [size, size],
            output_size: [size, size],
            ..ModelConfig::toy()
        }
    }

    fn image(size: usize, seed: u64) -> Tensor {
        SeededNoise::new(seed)
            .standard_normal(&[1, 1, size, size], DType::F32, &Device::Cpu)
            .unwrap()
    }

    fn one_hot_disk(size: usize) -> Tensor {
        let mut v = vec![0f32; 2 * size * size];
        for r in 0..size {
            for c in 0..size {
                let d = ((r as f32 - size as f32 / 2.0).powi(2) + (c as f32 - size as f32 / 2.0).powi(2)).sqrt();
                let fg = d < size as f32 / 4.0;
                v[r * size + c] = if fg { 0.0 } else { 1.0 };
                v[size * size + r * size + c] = if fg { 1.0 } else { 0.0 };
            }
        }
        Tensor::from_vec(v, (1, 2, size, size), &Device::Cpu).unwrap()
    }

    #[test]
    fn feature_resolutions_follow_halving() {
        let m = VaeUnet::new(toy(3, 32), 0).unwrap();
        let skips = m.encode_image(&image(32, 1)).unwrap();
        let sizes: Vec<_> = skips.levels().iter().map(|t| t.dims()[2]).collect();
        assert_eq!(sizes, vec![32, 16, 8]);
    }

    #[test]
    fn full_size_feature_resolutions() {
        let cfg = ModelConfig {
            encoder_channels: vec![2, 2, 2],
            output_size: [224, 224],
            ..ModelConfig::default()
        };
        let m = VaeUnet::new(cfg, 0).unwrap();
        let skips = m.encode_image(&image(224, 1)).unwrap();
        let sizes: Vec<_> = skips.levels().iter().map(|t| t.dims()[2]).collect();
        assert_eq!(sizes, vec![224, 112, 56]);
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let m = VaeUnet::new(toy(3, 32), 0).unwrap();
        let err = m.encode_image(&image(16, 1)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }), "{err}");
    }

    #[test]
    fn encoding_is_deterministic() {
        let m = VaeUnet::new(toy(2, 16), 0).unwrap();
        let x = image(16, 3);
        let a: Vec<f32> = m.encode_image(&x).unwrap().levels()[1].flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = m.encode_image(&x).unwrap().levels()[1].flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zeroed_heads_give_standard_normal_fields() {
        let m = VaeUnet::new(toy(3, 16), 0).unwrap();
        m.zero_latent_heads().unwrap();
        for g in m.prior_fields(&image(16, 2)).unwrap() {
            let s: f32 = g.mean().abs().unwrap().sum_all().unwrap().to_scalar().unwrap();
            let v: f32 = g.log_var().abs().unwrap().sum_all().unwrap().to_scalar().unwrap();
            assert_eq!((s, v), (0.0, 0.0));
        }
    }

    #[test]
    fn branch_shapes_align() {
        let m = VaeUnet::new(toy(3, 16), 0).unwrap();
        let t = m.forward_train(&image(16, 4), &one_hot_disk(16), &mut SeededNoise::new(1)).unwrap();
        assert_eq!(t.logits.dims(), &[1, 2, 16, 16]);
        for (q, p) in t.q_levels.iter().zip(&t.p_levels) {
            assert_eq!(q.dims(), p.dims());
        }
        assert_eq!(t.q_levels[2].dims(), &[1, 2, 4, 4]);
        assert!(t.kl.reduced_value().unwrap() > 0.0);
    }

    #[test]
    fn rejects_non_one_hot_segmentation() {
        let m = VaeUnet::new(toy(2, 16), 0).unwrap();
        let y = (one_hot_disk(16) * 0.5).unwrap();
        let skips = m.encode_image(&image(16, 0)).unwrap();
        let (_, z) = m.image_latents(&skips, LatentSampling::Mean).unwrap();
        assert!(m.encode_segmentation(&y, &z).is_err());
    }

    #[test]
    fn decoder_rejects_mismatched_latents() {
        let m = VaeUnet::new(toy(2, 16), 0).unwrap();
        let skips = m.encode_image(&image(16, 0)).unwrap();
        let (_, z) = m.image_latents(&skips, LatentSampling::Mean).unwrap();
        let swapped = LatentStack::new(vec![z.levels()[1].clone(), z.levels()[0].clone()]);
        assert!(m.decode(&skips, &swapped).is_err());
    }

    #[test]
    fn prior_matches_zero_noise_sampling() {
        let m = VaeUnet::new(toy(3, 16), 5).unwrap();
        let x = image(16, 6);
        let prior = m.predict_prior(&x).unwrap();
        let zero = m.predict_samples_with(&x, 3, &mut ZeroNoise).unwrap();
        for s in zero.samples() {
            assert_eq!(s, &prior[0]);
        }
        let logits_a: Vec<f32> = m.prior_logits(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let logits_b: Vec<f32> = m.prior_logits(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(logits_a, logits_b);
    }

    #[test]
    fn sample_count_zero_is_rejected() {
        let m = VaeUnet::new(toy(2, 16), 0).unwrap();
        assert!(m.predict_samples(&image(16, 0), 0, 1).is_err());
    }

    #[test]
    fn output_resize_stage() {
        let cfg = ModelConfig {
            output_size: [24, 24],
            input_size: [16, 16],
            ..toy(2, 16)
        };
        let m = VaeUnet::new(cfg, 0).unwrap();
        let y = Tensor::cat(
            &[
                Tensor::ones((1, 1, 24, 24), DType::F32, &Device::Cpu).unwrap(),
                Tensor::zeros((1, 1, 24, 24), DType::F32, &Device::Cpu).unwrap(),
            ],
            1,
        )
        .unwrap();
        let t = m.forward_train(&image(16, 1), &y, &mut SeededNoise::new(0)).unwrap();
        assert_eq!(t.logits.dims(), &[1, 2, 24, 24]);
    }
}

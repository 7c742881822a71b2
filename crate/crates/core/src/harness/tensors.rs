use candle_core::{DType, Device, Tensor};
use ndarray::Array3;

use crate::metrics::LabelMap;
use crate::{Error, Result};

/// Stacks `[c, h, w]` images into a `[b, c, h, w]` tensor.
pub fn image_tensor(images: &[&Array3<f32>], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::invalid("empty image batch"))?;
    let (c, h, w) = first.dim();
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if img.dim() != (c, h, w) {
            let (a, b, d) = img.dim();
            return Err(Error::shape("image batch", &[c, h, w], &[a, b, d]));
        }
        data.extend(img.iter().copied());
    }
    Ok(Tensor::from_vec(data, (images.len(), c, h, w), device)?.to_dtype(dtype)?)
}

/// One-hot `[b, classes, h, w]` encoding of label maps.
pub fn one_hot_tensor(maps: &[&LabelMap], classes: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let first = maps.first().ok_or_else(|| Error::invalid("empty label batch"))?;
    let (h, w) = first.dim();
    let mut data = vec![0f32; maps.len() * classes * h * w];
    for (b, m) in maps.iter().enumerate() {
        if m.dim() != (h, w) {
            return Err(Error::shape("label batch", &[h, w], &[m.dim().0, m.dim().1]));
        }
        for ((r, c), &v) in m.indexed_iter() {
            let k = v as usize;
            if k >= classes {
                return Err(Error::invalid(format!("label {k} outside {classes} classes")));
            }
            data[((b * classes + k) * h + r) * w + c] = 1.0;
        }
    }
    Ok(Tensor::from_vec(data, (maps.len(), classes, h, w), device)?.to_dtype(dtype)?)
}

use ndarray::{Array2, Zip};

use super::{check_same_shape, LabelMap, Mask, SampleSet};
use crate::{Error, Result};

/// Pixel-wise uncertainty in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub values: Array2<f64>,
}

impl UncertaintyMap {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.mean().unwrap_or(0.0)
    }

    /// Mean over the pixels selected by `mask`; `None` for an empty mask.
    pub fn masked_mean(&self, mask: &Mask) -> Option<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        Zip::from(&self.values).and(mask).for_each(|&v, &m| {
            if m {
                sum += v;
                n += 1;
            }
        });
        (n > 0).then(|| sum / n as f64)
    }
}

/// Variance of the one-hot encodings across samples, summed over classes
/// and divided by its maximum (left at zero when all samples agree).
pub fn variance_map(pred: &SampleSet) -> Result<UncertaintyMap> {
    if pred.len() < 2 {
        return Err(Error::invalid("variance map needs at least two samples"));
    }
    let (h, w) = pred.shape();
    let n = pred.len() as f64;
    let k = pred.class_count();
    let mut counts = vec![Array2::<f64>::zeros((h, w)); k];
    for s in pred.samples() {
        for ((r, c), &v) in s.indexed_iter() {
            counts[v as usize][[r, c]] += 1.0;
        }
    }
    let mut raw = Array2::<f64>::zeros((h, w));
    for cnt in &counts {
        // Bernoulli variance p(1 − p) of the class indicator
        Zip::from(&mut raw).and(cnt).for_each(|v, &m| {
            let p = m / n;
            *v += p * (1.0 - p);
        });
    }
    let max = raw.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        raw.mapv_inplace(|v| v / max);
    }
    Ok(UncertaintyMap { values: raw })
}

/// Mean uncertainty inside and outside `region`.
pub fn region_disagreement(map: &UncertaintyMap, region: &Mask) -> Result<(f64, f64)> {
    if map.values.dim() != region.dim() {
        let (a, b) = (map.values.dim(), region.dim());
        return Err(Error::shape("region mask", &[a.0, a.1], &[b.0, b.1]));
    }
    let inside = map.masked_mean(region);
    let outside = map.masked_mean(&region.mapv(|m| !m));
    match (inside, outside) {
        (Some(i), Some(o)) => Ok((i, o)),
        _ => Err(Error::invalid("region mask must be neither empty nor full")),
    }
}

/// Chebyshev dilation by `radius` pixels.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dim();
    let mut out = Mask::from_elem((h, w), false);
    for ((r, c), &m) in mask.indexed_iter() {
        if !m {
            continue;
        }
        let (r0, r1) = (r.saturating_sub(radius), (r + radius).min(h - 1));
        let (c0, c1) = (c.saturating_sub(radius), (c + radius).min(w - 1));
        out.slice_mut(ndarray::s![r0..=r1, c0..=c1]).fill(true);
    }
    out
}

/// Pixels near any label transition or annotator disagreement, dilated by
/// `radius`.
pub fn boundary_band(annotations: &[LabelMap], radius: usize) -> Result<Mask> {
    let first = annotations
        .first()
        .ok_or_else(|| Error::invalid("boundary band needs at least one annotation"))?;
    for a in annotations {
        check_same_shape(first, a)?;
    }
    let (h, w) = first.dim();
    let mut band = Mask::from_elem((h, w), false);
    for ((r, c), b) in band.indexed_iter_mut() {
        let v = first[[r, c]];
        let disagree = annotations.iter().any(|a| a[[r, c]] != v);
        let edge = annotations.iter().any(|a| {
            let x = a[[r, c]];
            (r > 0 && a[[r - 1, c]] != x)
                || (r + 1 < h && a[[r + 1, c]] != x)
                || (c > 0 && a[[r, c - 1]] != x)
                || (c + 1 < w && a[[r, c + 1]] != x)
        });
        *b = disagree || edge;
    }
    Ok(dilate(&band, radius))
}

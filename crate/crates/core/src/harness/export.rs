use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use image::{ImageBuffer, Rgb};
use ndarray::{Array2, Array3, Axis};
use ndarray_npy::{read_npy, write_npy};

use super::tensors::image_tensor;
use crate::data::{preprocess, SegmentationCase};
use crate::metrics::{variance_map, SampleSet, UncertaintyMap};
use crate::network::VaeUnet;
use crate::{Error, Result};

/// Renders `values` with the magma colormap, mapping `[min, max]` onto the
/// full scale. A constant map renders as the darkest colour.
pub fn write_heatmap(values: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = values.dim();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let img = ImageBuffer::from_fn(w as u32, h as u32, |c, r| {
        let v = values[[r as usize, c as usize]];
        let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
        let col = colorous::MAGMA.eval_continuous(t.clamp(0.0, 1.0));
        Rgb([col.r, col.g, col.b])
    });
    img.save(path.as_ref())?;
    Ok(())
}

pub fn read_raw_map(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    read_npy(path.as_ref()).map_err(|e| Error::invalid(format!("{}: {e}", path.as_ref().display())))
}

fn write_raw<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>, path: &Path) -> Result<()> {
    write_npy(path, a).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

/// `n` sampled segmentations of one case and their variance map.
pub fn sample_uncertainty(
    model: &VaeUnet,
    case: &SegmentationCase,
    n: usize,
    seed: u64,
) -> Result<(SampleSet, UncertaintyMap)> {
    if n < 2 {
        return Err(Error::invalid("uncertainty needs at least two samples"));
    }
    let cfg = model.config();
    let pair = preprocess(case, cfg.input_size, cfg.output_size);
    let x = image_tensor(&[&pair.image], model.dtype(), model.device())?;
    let samples = model.predict_samples(&x, n, seed)?;
    let map = variance_map(&samples)?;
    Ok((samples, map))
}

/// Writes `uncertainty.npy` (raw normalised map) and `uncertainty.png`
/// (magma) into `out_dir`.
pub fn export_uncertainty(
    model: &VaeUnet,
    case: &SegmentationCase,
    n: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<UncertaintyMap> {
    let (_, map) = sample_uncertainty(model, case, n, seed)?;
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_raw(&map.values, &dir.join("uncertainty.npy"))?;
    write_heatmap(&map.values, dir.join("uncertainty.png"))?;
    Ok(map)
}

fn field_array(t: &Tensor) -> Result<Array3<f64>> {
    let (_, c, h, w) = t.dims4()?;
    let v: Vec<f64> = t.get(0)?.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    Ok(Array3::from_shape_vec((c, h, w), v).expect("field shape"))
}

/// For each level of the image branch under mean conditioning, writes the
/// channel-averaged `μ` and `log σ²` as heatmaps (`level<i>_mu.png`,
/// `level<i>_logvar.png`) and the full fields as `.npy`. Returns the image
/// paths.
pub fn export_latent_stats(model: &VaeUnet, case: &SegmentationCase, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let cfg = model.config();
    let pair = preprocess(case, cfg.input_size, cfg.output_size);
    let x = image_tensor(&[&pair.image], model.dtype(), model.device())?;
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut images = Vec::new();
    for (i, field) in model.prior_fields(&x)?.iter().enumerate() {
        for (tag, t) in [("mu", field.mean()), ("logvar", field.log_var())] {
            let raw = field_array(t)?;
            write_raw(&raw, &dir.join(format!("level{i}_{tag}.npy")))?;
            let avg = raw.mean_axis(Axis(0)).expect("latent channels > 0");
            let png = dir.join(format!("level{i}_{tag}.png"));
            write_heatmap(&avg, &png)?;
            images.push(png);
        }
    }
    Ok(images)
}

//! Uncertainty under distribution shift: blur, pasted patches and foreign
//! images.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::export::{sample_uncertainty, write_heatmap};
use super::tensors::image_tensor;
use crate::data::{gaussian_blur, preprocess, random_patch, read_image, resize_labels_nearest, SegmentationCase};
use crate::metrics::{boundary_band, region_disagreement, LabelMap, Mask};
use crate::network::VaeUnet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodKind {
    Blur,
    Patch,
    External,
}

impl std::str::FromStr for OodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blur" => Ok(OodKind::Blur),
            "patch" => Ok(OodKind::Patch),
            "external" => Ok(OodKind::External),
            other => Err(Error::invalid(format!("unknown perturbation {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodParams {
    pub sigmas: Vec<f64>,
    /// Patch area as a fraction of the image.
    pub ratio: f64,
    pub external: Option<PathBuf>,
    pub samples: usize,
    /// Dilation of the boundary band used as the region for non-patch runs.
    pub band_radius: usize,
}

impl Default for OodParams {
    fn default() -> Self {
        Self {
            sigmas: vec![1.0, 2.0, 4.0],
            ratio: 0.1,
            external: None,
            samples: 10,
            band_radius: 1,
        }
    }
}

/// One perturbed run. `inside_mean` is over the patch for patch runs and
/// over the boundary band otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodEntry {
    pub label: String,
    pub kind: Option<OodKind>,
    pub sigma: Option<f64>,
    pub region: String,
    pub inside_mean: f64,
    pub outside_mean: f64,
    pub mean_uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub case_id: String,
    pub seed: u64,
    pub entries: Vec<OodEntry>,
}

impl OodReport {
    pub fn entry(&self, label: &str) -> Option<&OodEntry> {
        self.entries.iter().find(|e| e.label == label)
    }
}

struct Run<'a> {
    model: &'a VaeUnet,
    params: &'a OodParams,
    seed: u64,
    out: Option<&'a Path>,
}

impl Run<'_> {
    fn score(
        &self,
        label: String,
        kind: Option<OodKind>,
        sigma: Option<f64>,
        case: &SegmentationCase,
        region: (&str, &Mask),
    ) -> Result<OodEntry> {
        // every run shares the noise seed so only the image differs
        let (_, map) = sample_uncertainty(self.model, case, self.params.samples, self.seed)?;
        let (inside, outside) = region_disagreement(&map, region.1)?;
        if let Some(dir) = self.out {
            let d = dir.join(&label);
            std::fs::create_dir_all(&d)?;
            ndarray_npy::write_npy(d.join("uncertainty.npy"), &map.values)
                .map_err(|e| Error::invalid(e.to_string()))?;
            write_heatmap(&map.values, d.join("uncertainty.png"))?;
        }
        Ok(OodEntry {
            label,
            kind,
            sigma,
            region: region.0.into(),
            inside_mean: inside,
            outside_mean: outside,
            mean_uncertainty: map.mean(),
        })
    }
}

/// Runs the clean image and each requested perturbation through
/// [`sample_uncertainty`] and scores where the uncertainty lands.
/// With `out_dir`, each run's map is written to `<out_dir>/<label>/`
/// and the report to `<out_dir>/ood_report.json`.
pub fn ood_battery(
    model: &VaeUnet,
    case: &SegmentationCase,
    kinds: &[OodKind],
    params: &OodParams,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<OodReport> {
    if params.samples < 2 {
        return Err(Error::invalid("ood battery needs at least two samples per run"));
    }
    case.validate()?;
    let out = model.config().output_size;
    let annotations: Vec<LabelMap> = case.annotations.iter().map(|a| resize_labels_nearest(a, out)).collect();
    let band = boundary_band(&annotations, params.band_radius)?;
    let run = Run {
        model,
        params,
        seed,
        out: out_dir,
    };

    let mut entries = vec![run.score("clean".into(), None, None, case, ("boundary_band", &band))?];
    for kind in kinds {
        match kind {
            OodKind::Blur => {
                for &s in &params.sigmas {
                    let blurred = SegmentationCase {
                        image: gaussian_blur(&case.image, s)?,
                        ..case.clone()
                    };
                    entries.push(run.score(
                        format!("blur_sigma_{s}"),
                        Some(OodKind::Blur),
                        Some(s),
                        &blurred,
                        ("boundary_band", &band),
                    )?);
                }
            }
            OodKind::Patch => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (image, mask) = random_patch(&case.image, params.ratio, &mut rng)?;
                let mask = resize_labels_nearest(&mask.mapv(u8::from), out).mapv(|v| v == 1);
                let patched = SegmentationCase {
                    image,
                    ..case.clone()
                };
                entries.push(run.score("patch".into(), Some(OodKind::Patch), None, &patched, ("patch", &mask))?);
            }
            OodKind::External => {
                let path = params
                    .external
                    .as_ref()
                    .ok_or_else(|| Error::invalid("external perturbation needs an image path"))?;
                let image = read_image(path)?;
                let (_, h, w) = image.dim();
                let foreign = SegmentationCase {
                    case_id: format!("{}_external", case.case_id),
                    image,
                    annotations: vec![LabelMap::zeros((h, w))],
                    reference: None,
                    spacing: None,
                };
                // no annotations exist, so the band follows the prior prediction
                let cfg = model.config();
                let pair = preprocess(&foreign, cfg.input_size, cfg.output_size);
                let x = image_tensor(&[&pair.image], model.dtype(), model.device())?;
                let prior = model.predict_prior(&x)?;
                let pred_band = boundary_band(&prior, params.band_radius)?;
                let pred_band = if pred_band.iter().all(|&b| !b) || pred_band.iter().all(|&b| b) {
                    band.clone()
                } else {
                    pred_band
                };
                entries.push(run.score(
                    "external".into(),
                    Some(OodKind::External),
                    None,
                    &foreign,
                    ("prediction_band", &pred_band),
                )?);
            }
        }
    }
    let report = OodReport {
        case_id: case.case_id.clone(),
        seed,
        entries,
    };
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("ood_report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

//! Synthetic disks with annotator disagreement.
//!
//! Each case is a bright disk with a soft edge on a dark, noisy
//! background. Unambiguous cases have four identical annotations of the
//! disk. In ambiguous cases each annotator draws the disk with its own
//! radius offset. All cases share the same edge profile, so the image
//! alone never tells which kind a case is. The unperturbed disk is kept
//! as the case's reference.

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SegmentationCase;
use crate::metrics::LabelMap;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub seed: u64,
    pub case_count: usize,
    pub image_size: usize,
    /// Fraction of cases whose boundary depends on the annotator.
    pub ambiguity_rate: f64,
    /// Disk radius range in pixels, drawn uniformly.
    pub radius_range: (f64, f64),
    /// Maximum distance of the disk centre from the image centre, pixels.
    pub center_jitter: f64,
    /// Per-annotator radius offsets for ambiguous cases; also fixes the
    /// annotator count.
    pub annotator_offsets: Vec<f64>,
    pub noise_std: f64,
    /// Width of the logistic intensity ramp at the disk edge, pixels.
    pub edge_width: f64,
}

impl ToySpec {
    pub fn new(seed: u64, case_count: usize, image_size: usize, ambiguity_rate: f64) -> Self {
        let s = image_size as f64;
        Self {
            seed,
            case_count,
            image_size,
            ambiguity_rate,
            radius_range: (0.25 * s, 0.34 * s),
            center_jitter: 0.1 * s,
            annotator_offsets: vec![-2.0, -1.0, 1.0, 2.0],
            noise_std: 0.05,
            edge_width: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::invalid("toy image_size must be at least 16"));
        }
        if !(0.0..=1.0).contains(&self.ambiguity_rate) {
            return Err(Error::invalid("ambiguity_rate must be in [0, 1]"));
        }
        let (lo, hi) = self.radius_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::invalid("radius_range must be positive and ordered"));
        }
        if self.annotator_offsets.is_empty() {
            return Err(Error::invalid("need at least one annotator"));
        }
        if !(self.edge_width > 0.0) {
            return Err(Error::invalid("edge_width must be positive"));
        }
        if self.center_jitter < 0.0 || self.noise_std < 0.0 {
            return Err(Error::invalid("jitter and noise must be non-negative"));
        }
        Ok(())
    }
}

const BACKGROUND: f64 = 0.2;
const FOREGROUND: f64 = 0.7;

/// Label map of a disk: pixel `(r, c)` is foreground when its centre
/// `(r + ½, c + ½)` lies within `radius` of `center`.
pub fn rasterize_disk(size: usize, center: (f64, f64), radius: f64) -> LabelMap {
    Array2::from_shape_fn((size, size), |(r, c)| {
        let dy = r as f64 + 0.5 - center.0;
        let dx = c as f64 + 0.5 - center.1;
        (dy * dy + dx * dx <= radius * radius) as u8
    })
}

fn render(size: usize, center: (f64, f64), radius: f64, edge: f64, noise: &mut impl FnMut() -> f64) -> Array3<f32> {
    Array3::from_shape_fn((1, size, size), |(_, r, c)| {
        let dy = r as f64 + 0.5 - center.0;
        let dx = c as f64 + 0.5 - center.1;
        let d = (dy * dy + dx * dx).sqrt();
        let inside = 1.0 / (1.0 + ((d - radius) / edge).exp());
        let v = BACKGROUND + (FOREGROUND - BACKGROUND) * inside + noise();
        // 16-bit quantisation keeps the on-disk round trip exact
        ((v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0) as f32
    })
}

/// Generates the toy benchmark; identical specs give identical cases.
pub fn make_toy_dataset(spec: &ToySpec) -> Result<Vec<SegmentationCase>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ambiguous_count = (spec.ambiguity_rate * spec.case_count as f64).round() as usize;
    let mut flags: Vec<bool> = (0..spec.case_count).map(|i| i < ambiguous_count).collect();
    flags.shuffle(&mut rng);

    let normal = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let size = spec.image_size;
    let mid = size as f64 / 2.0;
    let mut cases = Vec::with_capacity(spec.case_count);
    for (i, &ambiguous) in flags.iter().enumerate() {
        let (lo, hi) = spec.radius_range;
        let radius = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let j = spec.center_jitter;
        let center = if j > 0.0 {
            (mid + rng.gen_range(-j..j), mid + rng.gen_range(-j..j))
        } else {
            (mid, mid)
        };
        let mut noise = || {
            if spec.noise_std > 0.0 {
                normal.sample(&mut rng)
            } else {
                0.0
            }
        };
        let image = render(size, center, radius, spec.edge_width, &mut noise);
        let reference = rasterize_disk(size, center, radius);
        let annotations = spec
            .annotator_offsets
            .iter()
            .map(|&off| {
                if ambiguous {
                    rasterize_disk(size, center, (radius + off).max(0.0))
                } else {
                    reference.clone()
                }
            })
            .collect();
        cases.push(SegmentationCase {
            case_id: format!("toy_{i:04}"),
            image,
            annotations,
            reference: Some(reference),
            spacing: None,
        });
    }
    Ok(cases)
}

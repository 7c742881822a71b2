//! Evaluation metrics over integer label maps.
//!
//! Overlap metrics ([`dice_coefficient`], [`iou_distance`]) and boundary
//! metrics ([`hausdorff_distance`]) compare two maps for one class.
//! Distribution metrics ([`ged_squared`], [`ncc_score`]) compare a set of
//! predictions to a set of annotations. [`variance_map`] turns a set of
//! predictions into a normalised uncertainty map.

mod distribution;
mod hausdorff;
mod overlap;
mod report;
mod uncertainty;

use ndarray::Array2;

use crate::{Error, Result};

pub use distribution::{ged_squared, ged_squared_class, ncc_score, ncc_score_class, normalized_cross_correlation};
pub use hausdorff::{boundary_pixels, hausdorff_distance, Spacing};
pub use overlap::{dice_coefficient, iou_distance};
pub use report::{Aggregate, MetricRecord};
pub use uncertainty::{boundary_band, dilate, region_disagreement, variance_map, UncertaintyMap};

/// Class id per pixel, `[height, width]`.
pub type LabelMap = Array2<u8>;

/// Boolean pixel mask, `[height, width]`.
pub type Mask = Array2<bool>;

pub fn class_mask(map: &LabelMap, class_id: u8) -> Mask {
    map.mapv(|v| v == class_id)
}

/// Non-empty collection of equally shaped label maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    samples: Vec<LabelMap>,
}

impl SampleSet {
    pub fn new(samples: Vec<LabelMap>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("sample set must not be empty"))?;
        let shape = first.dim();
        if let Some(bad) = samples.iter().find(|s| s.dim() != shape) {
            return Err(Error::shape(
                "sample set member",
                &[shape.0, shape.1],
                &[bad.dim().0, bad.dim().1],
            ));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[LabelMap] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.samples[0].dim()
    }

    /// Largest label id plus one, at least 2.
    pub fn class_count(&self) -> usize {
        let max = self.samples.iter().flat_map(|s| s.iter()).copied().max().unwrap_or(0);
        (max as usize + 1).max(2)
    }
}

pub(crate) fn check_same_shape(a: &LabelMap, b: &LabelMap) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape("label maps", &[a.dim().0, a.dim().1], &[b.dim().0, b.dim().1]));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_set_validation() {
        assert!(SampleSet::new(vec![]).is_err());
        let a = LabelMap::zeros((2, 2));
        let b = LabelMap::zeros((2, 3));
        assert!(SampleSet::new(vec![a.clone(), b]).is_err());
        let s = SampleSet::new(vec![a.clone(), a]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.class_count(), 2);
    }
}

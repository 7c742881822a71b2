//! Cases, the on-disk dataset layout, the synthetic toy benchmark,
//! preprocessing and out-of-distribution perturbations.

mod io;
mod perturb;
mod preprocess;
mod toy;

use ndarray::Array3;

use crate::metrics::{LabelMap, Spacing};

pub use io::{load_case, load_cases, read_image, write_case, CaseStream, Layout};
pub use perturb::{gaussian_blur, random_patch, patch_side};
pub use preprocess::{preprocess, resize_image_bilinear, resize_labels_nearest, ModelPair};
pub use toy::{make_toy_dataset, rasterize_disk, ToySpec};

/// One image with its annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationCase {
    pub case_id: String,
    /// `[channels, height, width]`.
    pub image: Array3<f32>,
    /// One map per annotator (or a single multi-class map).
    pub annotations: Vec<LabelMap>,
    /// Known ground truth, when the data has one (the toy benchmark does).
    pub reference: Option<LabelMap>,
    pub spacing: Option<Spacing>,
}

impl SegmentationCase {
    pub fn height(&self) -> usize {
        self.image.dim().1
    }

    pub fn width(&self) -> usize {
        self.image.dim().2
    }

    /// Largest label across annotations (and reference) plus one.
    pub fn label_bound(&self) -> usize {
        self.annotations
            .iter()
            .chain(self.reference.iter())
            .flat_map(|a| a.iter())
            .copied()
            .max()
            .map_or(1, |m| m as usize + 1)
    }

    pub(crate) fn validate(&self) -> crate::Result<()> {
        let shape = (self.height(), self.width());
        if self.annotations.is_empty() {
            return Err(self.error("no annotations"));
        }
        for (k, a) in self.annotations.iter().chain(self.reference.iter()).enumerate() {
            if a.dim() != shape {
                return Err(self.error(format!(
                    "annotation {k} is {:?}, image is {shape:?}",
                    a.dim()
                )));
            }
        }
        Ok(())
    }

    fn error(&self, message: impl Into<String>) -> crate::Error {
        crate::Error::Case {
            case_id: self.case_id.clone(),
            message: message.into(),
        }
    }
}

use ndarray::{Array2, Array3, Axis};

use super::SegmentationCase;
use crate::metrics::LabelMap;
use crate::resize::{bilinear_matrix, nearest_indices};

/// A case resampled to the network's input/output sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair {
    pub case_id: String,
    /// `[channels, input_h, input_w]`, zero mean and unit variance.
    pub image: Array3<f32>,
    /// Annotations at the output size.
    pub annotations: Vec<LabelMap>,
    pub reference: Option<LabelMap>,
}

/// Separable bilinear resize of every channel.
pub fn resize_image_bilinear(image: &Array3<f32>, size: [usize; 2]) -> Array3<f32> {
    let (ch, h, w) = image.dim();
    if [h, w] == size {
        return image.clone();
    }
    let to_f32 = |m: Vec<f64>, r: usize, c: usize| {
        Array2::from_shape_vec((r, c), m.into_iter().map(|v| v as f32).collect()).expect("matrix shape")
    };
    let rows = to_f32(bilinear_matrix(h, size[0]), size[0], h);
    let cols = to_f32(bilinear_matrix(w, size[1]), size[1], w);
    let mut out = Array3::zeros((ch, size[0], size[1]));
    for (k, plane) in image.axis_iter(Axis(0)).enumerate() {
        out.index_axis_mut(Axis(0), k)
            .assign(&rows.dot(&plane).dot(&cols.t()));
    }
    out
}

/// Nearest-neighbour resize; never invents label ids.
pub fn resize_labels_nearest(map: &LabelMap, size: [usize; 2]) -> LabelMap {
    let (h, w) = map.dim();
    if [h, w] == size {
        return map.clone();
    }
    let ri = nearest_indices(h, size[0]);
    let ci = nearest_indices(w, size[1]);
    Array2::from_shape_fn((size[0], size[1]), |(r, c)| map[[ri[r], ci[c]]])
}

/// Zero mean, unit variance over all pixels and channels. A constant image
/// is only centred.
pub fn normalize_intensity(image: &mut Array3<f32>) {
    let n = image.len() as f64;
    if n == 0.0 {
        return;
    }
    let mean = image.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = image.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if std > 0.0 { 1.0 / std } else { 1.0 };
    image.mapv_inplace(|v| ((v as f64 - mean) * scale) as f32);
}

/// Image to `input_size` (bilinear) and labels to `output_size`
/// (nearest-neighbour), then per-image intensity normalisation.
pub fn preprocess(case: &SegmentationCase, input_size: [usize; 2], output_size: [usize; 2]) -> ModelPair {
    let mut image = resize_image_bilinear(&case.image, input_size);
    normalize_intensity(&mut image);
    ModelPair {
        case_id: case.case_id.clone(),
        image,
        annotations: case
            .annotations
            .iter()
            .map(|a| resize_labels_nearest(a, output_size))
            .collect(),
        reference: case.reference.as_ref().map(|r| resize_labels_nearest(r, output_size)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn case(image: Array3<f32>, ann: LabelMap) -> SegmentationCase {
        SegmentationCase {
            case_id: "c".into(),
            image,
            annotations: vec![ann],
            reference: None,
            spacing: None,
        }
    }

    #[test]
    fn same_size_is_identity_up_to_normalisation() {
        let img = Array3::from_shape_fn((1, 4, 4), |(_, r, c)| (r * 4 + c) as f32);
        let ann = Array2::from_shape_fn((4, 4), |(r, _)| (r % 3) as u8);
        let pair = preprocess(&case(img.clone(), ann.clone()), [4, 4], [4, 4]);
        assert_eq!(pair.annotations[0], ann);
        let mut expect = img;
        normalize_intensity(&mut expect);
        assert_eq!(pair.image, expect);
        let mean: f32 = pair.image.iter().sum::<f32>() / 16.0;
        assert!(mean.abs() < 1e-6);
    }

    #[test]
    fn checkerboard_nearest_downsample() {
        let board = Array2::from_shape_fn((4, 4), |(r, c)| ((r + c) % 2) as u8);
        // rows/cols 0 and 2 are sampled, all with even parity
        assert_eq!(resize_labels_nearest(&board, [2, 2]), array![[0u8, 0], [0, 0]]);
        let board = Array2::from_shape_fn((4, 4), |(r, c)| ((r / 2 + c) % 2) as u8);
        assert_eq!(resize_labels_nearest(&board, [2, 2]), array![[0u8, 0], [1, 1]]);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Array3::from_elem((1, 3, 3), 0.4f32);
        let out = resize_image_bilinear(&img, [6, 5]);
        assert!(out.iter().all(|&v| (v - 0.4).abs() < 1e-6));
        let mut norm = img;
        normalize_intensity(&mut norm);
        assert!(norm.iter().all(|&v| v.abs() < 1e-7));
    }

    proptest! {
        #[test]
        fn nearest_never_invents_labels(
            h in 1usize..12, w in 1usize..12, oh in 1usize..20, ow in 1usize..20, seed in 0u64..1000
        ) {
            let map = Array2::from_shape_fn((h, w), |(r, c)| ((r * 7 + c * 13 + seed as usize) % 5) as u8);
            let out = resize_labels_nearest(&map, [oh, ow]);
            let src: std::collections::BTreeSet<u8> = map.iter().copied().collect();
            prop_assert!(out.iter().all(|v| src.contains(v)));
        }
    }
}

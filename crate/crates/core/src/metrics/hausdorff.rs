use serde::{Deserialize, Serialize};

use super::{check_same_shape, LabelMap};
use crate::{Error, Result};

/// Physical pixel size along rows and columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub row: f64,
    pub col: f64,
}

impl Default for Spacing {
    fn default() -> Self {
        Self { row: 1.0, col: 1.0 }
    }
}

/// Foreground pixels with a 4-neighbour outside the mask. Pixels on the
/// image border count as boundary.
pub fn boundary_pixels(map: &LabelMap, class_id: u8) -> Vec<(usize, usize)> {
    let (h, w) = map.dim();
    let fg = |r: usize, c: usize| map[[r, c]] == class_id;
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !fg(r, c) {
                continue;
            }
            let edge = r == 0
                || c == 0
                || r + 1 == h
                || c + 1 == w
                || !fg(r - 1, c)
                || !fg(r + 1, c)
                || !fg(r, c - 1)
                || !fg(r, c + 1);
            if edge {
                out.push((r, c));
            }
        }
    }
    out
}

fn directed(from: &[(usize, usize)], to: &[(usize, usize)], sp: Spacing) -> Vec<f64> {
    from.iter()
        .map(|&(r, c)| {
            to.iter()
                .map(|&(r2, c2)| {
                    let dr = (r as f64 - r2 as f64) * sp.row;
                    let dc = (c as f64 - c2 as f64) * sp.col;
                    dr * dr + dc * dc
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Linear-interpolated percentile of `v` (sorted in place).
fn percentile(v: &mut [f64], p: f64) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

/// Symmetric Hausdorff distance between the class boundaries, at the given
/// percentile of each directed distance set (100 = classic HD, 95 = HD95).
///
/// Returns `None` when either mask is empty for the class.
pub fn hausdorff_distance(
    pred: &LabelMap,
    truth: &LabelMap,
    class_id: u8,
    percentile_rank: f64,
    spacing: Option<Spacing>,
) -> Result<Option<f64>> {
    check_same_shape(pred, truth)?;
    if !(percentile_rank > 0.0 && percentile_rank <= 100.0) {
        return Err(Error::invalid(format!("percentile {percentile_rank} not in (0, 100]")));
    }
    let a = boundary_pixels(pred, class_id);
    let b = boundary_pixels(truth, class_id);
    if a.is_empty() || b.is_empty() {
        return Ok(None);
    }
    let sp = spacing.unwrap_or_default();
    let mut ab = directed(&a, &b, sp);
    let mut ba = directed(&b, &a, sp);
    Ok(Some(
        percentile(&mut ab, percentile_rank).max(percentile(&mut ba, percentile_rank)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn square(size: usize, top: usize, left: usize, side: usize) -> LabelMap {
        Array2::from_shape_fn((size, size), |(r, c)| {
            (r >= top && r < top + side && c >= left && c < left + side) as u8
        })
    }

    #[test]
    fn identical_masks() {
        let a = square(8, 2, 2, 3);
        assert_eq!(hausdorff_distance(&a, &a, 1, 100.0, None).unwrap(), Some(0.0));
    }

    #[test]
    fn single_pixels() {
        let mut a = LabelMap::zeros((8, 8));
        let mut b = LabelMap::zeros((8, 8));
        a[[1, 1]] = 1;
        b[[4, 5]] = 1;
        assert_eq!(hausdorff_distance(&a, &b, 1, 100.0, None).unwrap(), Some(5.0));
        let sp = Spacing { row: 2.0, col: 1.0 };
        let d = hausdorff_distance(&a, &b, 1, 100.0, Some(sp)).unwrap().unwrap();
        assert!((d - (36.0f64 + 16.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn shifted_square() {
        let a = square(8, 2, 1, 3);
        let b = square(8, 2, 3, 3);
        assert_eq!(hausdorff_distance(&a, &b, 1, 100.0, None).unwrap(), Some(2.0));
        assert_eq!(boundary_pixels(&a, 1).len(), 8);
    }

    #[test]
    fn empty_mask_is_undefined() {
        let a = square(8, 2, 2, 3);
        let e = LabelMap::zeros((8, 8));
        assert_eq!(hausdorff_distance(&a, &e, 1, 100.0, None).unwrap(), None);
        assert_eq!(hausdorff_distance(&e, &a, 1, 95.0, None).unwrap(), None);
    }

    #[test]
    fn percentile_bounds() {
        let a = square(8, 2, 2, 3);
        assert!(hausdorff_distance(&a, &a, 1, 0.0, None).is_err());
        assert!(hausdorff_distance(&a, &a, 1, 101.0, None).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let mut v = vec![3.0, 1.0, 2.0, 4.0];
        assert_eq!(percentile(&mut v, 100.0), 4.0);
        assert_eq!(percentile(&mut v, 50.0), 2.5);
    }
}

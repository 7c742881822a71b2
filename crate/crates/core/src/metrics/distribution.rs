use ndarray::{Array2, Zip};

use super::overlap::iou_distance;
use super::SampleSet;
use crate::{Error, Result};

/// Added to each standard deviation in the NCC denominator.
pub const NCC_EPS: f64 = 1e-8;
/// Added inside the logarithm of pixel-wise cross-entropies.
pub const XENT_EPS: f64 = 1e-8;

fn foreground_classes(pred: &SampleSet, truth: &SampleSet) -> Result<std::ops::Range<u8>> {
    if pred.shape() != truth.shape() {
        let (a, b) = (pred.shape(), truth.shape());
        return Err(Error::shape("sample sets", &[b.0, b.1], &[a.0, a.1]));
    }
    let k = pred.class_count().max(truth.class_count());
    Ok(1..k as u8)
}

fn mean_pairwise(a: &SampleSet, b: &SampleSet, class_id: u8) -> Result<f64> {
    let mut sum = 0.0;
    for s in a.samples() {
        for t in b.samples() {
            sum += iou_distance(s, t, class_id)?;
        }
    }
    Ok(sum / (a.len() * b.len()) as f64)
}

/// Squared generalised energy distance with `d = 1 − IoU` for one class.
///
/// Expectations run over all ordered pairs, same-index pairs included, so
/// `ged_squared_class(S, S, c) == 0` exactly.
pub fn ged_squared_class(pred: &SampleSet, truth: &SampleSet, class_id: u8) -> Result<f64> {
    let cross = mean_pairwise(pred, truth, class_id)?;
    let pred_div = mean_pairwise(pred, pred, class_id)?;
    let truth_div = mean_pairwise(truth, truth, class_id)?;
    Ok(2.0 * cross - pred_div - truth_div)
}

/// [`ged_squared_class`] averaged over foreground classes.
pub fn ged_squared(pred: &SampleSet, truth: &SampleSet) -> Result<f64> {
    let classes = foreground_classes(pred, truth)?;
    let n = classes.len() as f64;
    let mut sum = 0.0;
    for c in classes {
        sum += ged_squared_class(pred, truth, c)?;
    }
    Ok(sum / n)
}

/// Zero-normalised cross correlation of two equally shaped maps.
///
/// Identical maps (constant ones included) score exactly 1.
pub fn normalized_cross_correlation(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("ncc maps", &[a.dim().0, a.dim().1], &[b.dim().0, b.dim().1]));
    }
    if a == b {
        return Ok(1.0);
    }
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    Zip::from(a).and(b).for_each(|&x, &y| {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    });
    let sa = (va / n).sqrt();
    let sb = (vb / n).sqrt();
    Ok((cov / n) / ((sa + NCC_EPS) * (sb + NCC_EPS)))
}

/// S_NCC for one class treated as a binary problem.
///
/// With `s̄` the mean one-hot prediction, compares the expected pixel-wise
/// cross-entropy `E_s[CE(s̄, s)]` against `E_s[CE(t, s)]` for every
/// annotation `t`, and averages the correlations over annotations.
pub fn ncc_score_class(pred: &SampleSet, truth: &SampleSet, class_id: u8) -> Result<f64> {
    let (h, w) = pred.shape();
    let n = pred.len() as f64;
    // log(one-hot + eps) is one of two constants
    let log_hit = (1.0 + XENT_EPS).ln();
    let log_miss = XENT_EPS.ln();

    let mut mean_fg = Array2::<f64>::zeros((h, w));
    for s in pred.samples() {
        Zip::from(&mut mean_fg).and(s).for_each(|m, &v| *m += (v == class_id) as u8 as f64 / n);
    }

    // E_s[−Σ_c a_c log(s_c + eps)] for a soft target a = (1 − a_fg, a_fg)
    let expected_xent = |target_fg: &Array2<f64>| -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((h, w));
        for s in pred.samples() {
            Zip::from(&mut out).and(target_fg).and(s).for_each(|o, &a, &v| {
                let fg = v == class_id;
                let (lf, lb) = if fg { (log_hit, log_miss) } else { (log_miss, log_hit) };
                *o -= (a * lf + (1.0 - a) * lb) / n;
            });
        }
        out
    };

    let self_map = expected_xent(&mean_fg);
    let mut total = 0.0;
    for t in truth.samples() {
        let t_fg = t.mapv(|v| (v == class_id) as u8 as f64);
        total += normalized_cross_correlation(&self_map, &expected_xent(&t_fg))?;
    }
    Ok(total / truth.len() as f64)
}

/// [`ncc_score_class`] averaged over foreground classes.
pub fn ncc_score(pred: &SampleSet, truth: &SampleSet) -> Result<f64> {
    let classes = foreground_classes(pred, truth)?;
    let n = classes.len() as f64;
    let mut sum = 0.0;
    for c in classes {
        sum += ncc_score_class(pred, truth, c)?;
    }
    Ok(sum / n)
}

use super::{check_same_shape, LabelMap};
use crate::Result;

fn counts(s: &LabelMap, t: &LabelMap, class_id: u8) -> (usize, usize, usize) {
    let (mut a, mut b, mut both) = (0, 0, 0);
    for (&x, &y) in s.iter().zip(t.iter()) {
        let (x, y) = (x == class_id, y == class_id);
        a += x as usize;
        b += y as usize;
        both += (x && y) as usize;
    }
    (a, b, both)
}

/// `1 − IoU` of the class masks. Two empty masks are at distance 0.
pub fn iou_distance(s: &LabelMap, t: &LabelMap, class_id: u8) -> Result<f64> {
    check_same_shape(s, t)?;
    let (a, b, both) = counts(s, t, class_id);
    let union = a + b - both;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(1.0 - both as f64 / union as f64)
}

/// `2|s∩t| / (|s| + |t|)`; two empty masks score 1.
pub fn dice_coefficient(pred: &LabelMap, truth: &LabelMap, class_id: u8) -> Result<f64> {
    check_same_shape(pred, truth)?;
    let (a, b, both) = counts(pred, truth, class_id);
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

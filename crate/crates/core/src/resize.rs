//! Resampling weights shared by preprocessing and the network's output stage.
//!
//! Bilinear resampling uses half-pixel centres (`align_corners = false`) with
//! edge clamping. Nearest-neighbour maps destination `i` to
//! `floor(i · src / dst)`.

/// Dense `dst × src` row-major interpolation matrix for 1-D bilinear
/// resampling. Each row sums to one.
pub fn bilinear_matrix(src: usize, dst: usize) -> Vec<f64> {
    let mut m = vec![0.0; dst * src];
    if src == 0 || dst == 0 {
        return m;
    }
    let scale = src as f64 / dst as f64;
    for i in 0..dst {
        let x = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
        let lo = (x.floor() as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        let frac = x - lo as f64;
        m[i * src + lo] += 1.0 - frac;
        m[i * src + hi] += frac;
    }
    m
}

/// Source index for each destination index under nearest-neighbour sampling.
pub fn nearest_indices(src: usize, dst: usize) -> Vec<usize> {
    (0..dst)
        .map(|i| ((i * src) / dst).min(src.saturating_sub(1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_when_sizes_match() {
        let m = bilinear_matrix(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m[i * 4 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(nearest_indices(5, 5), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn rows_sum_to_one() {
        for (s, d) in [(3, 7), (8, 4), (224, 512), (5, 1)] {
            let m = bilinear_matrix(s, d);
            for row in m.chunks(s) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn halving_averages_pairs() {
        let m = bilinear_matrix(4, 2);
        assert_eq!(&m[0..4], &[0.5, 0.5, 0.0, 0.0]);
        assert_eq!(&m[4..8], &[0.0, 0.0, 0.5, 0.5]);
        assert_eq!(nearest_indices(4, 2), vec![0, 2]);
    }
}

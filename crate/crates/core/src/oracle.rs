//! Deliberately naive reference implementations.
//!
//! Nothing here shares code with the optimized paths: IoUs are counted pixel
//! by pixel, Matrix NMS is evaluated term by term from its definition, and the
//! convolutions are plain nested loops. Used by the `verify` command and the
//! test suites.

use crate::head::FeatureMap;
use crate::mask::BinaryMask;
use crate::suppress::DecayFn;

/// IoU counted pixel by pixel; 0 when both masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    assert_eq!((a.height(), a.width()), (b.height(), b.width()));
    let (mut inter, mut union) = (0u64, 0u64);
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (p, q) = (a.get(y, x), b.get(y, x));
            inter += (p && q) as u64;
            union += (p || q) as u64;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Dense IoU table over all ordered pairs `i < j`, zero elsewhere.
pub fn iou_table(masks: &[&BinaryMask]) -> Vec<Vec<f64>> {
    let n = masks.len();
    let mut t = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            t[i][j] = iou(masks[i], masks[j]);
        }
    }
    t
}

fn f(decay: DecayFn, iou: f64) -> f64 {
    match decay {
        DecayFn::Linear => 1.0 - iou,
        DecayFn::Gaussian { sigma } => (-(iou * iou) / sigma).exp(),
    }
}

/// Matrix NMS scores straight from the definition: the probability that
/// prediction `i` survives is approximated by `min_{k<i} f(iou_ki)`, and
/// `decay_j = min_{i<j} f(iou_ij) / min_{k<i} f(iou_ki)`. A zero denominator
/// gives `+inf` (that suppressor never wins the min); an empty min is 1.
pub fn matrix_nms_scores(scores: &[f64], ious: &[Vec<f64>], decay: DecayFn) -> Vec<f64> {
    let n = scores.len();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mut decay_j = f64::INFINITY;
        for i in 0..j {
            let mut survive_i = 1.0f64;
            for row in ious.iter().take(i) {
                survive_i = survive_i.min(f(decay, row[i]));
            }
            let term = if survive_i == 0.0 {
                f64::INFINITY
            } else {
                f(decay, ious[i][j]) / survive_i
            };
            decay_j = decay_j.min(term);
        }
        if decay_j.is_infinite() {
            decay_j = 1.0;
        }
        out.push(scores[j] * decay_j.min(1.0));
    }
    out
}

/// Literal dense evaluation: full `N × N` decay table including the
/// lower-triangle terms, then the column min.
pub fn matrix_nms_dense(scores: &[f64], ious: &[Vec<f64>], decay: DecayFn) -> Vec<f64> {
    let n = scores.len();
    let cmax: Vec<f64> = (0..n).map(|j| (0..n).map(|i| ious[i][j]).fold(0.0, f64::max)).collect();
    let mut table = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            table[i][j] = match decay {
                DecayFn::Gaussian { sigma } => (-(ious[i][j].powi(2) - cmax[i].powi(2)) / sigma).exp(),
                DecayFn::Linear => {
                    let den = 1.0 - cmax[i];
                    if den == 0.0 {
                        f64::INFINITY
                    } else {
                        (1.0 - ious[i][j]) / den
                    }
                }
            };
        }
    }
    (0..n)
        .map(|j| {
            let d = (0..n).map(|i| table[i][j]).fold(f64::INFINITY, f64::min);
            scores[j] * if d.is_infinite() { 1.0 } else { d.min(1.0) }
        })
        .collect()
}

/// Classic greedy NMS: take the best remaining prediction and drop everything
/// overlapping it by more than `threshold`. Input must be sorted by score.
pub fn greedy_nms(masks: &[&BinaryMask], threshold: f64) -> Vec<usize> {
    let n = masks.len();
    let mut removed = vec![false; n];
    let mut keep = Vec::new();
    for i in 0..n {
        if removed[i] {
            continue;
        }
        keep.push(i);
        for j in i + 1..n {
            if !removed[j] && iou(masks[i], masks[j]) > threshold {
                removed[j] = true;
            }
        }
    }
    keep
}

/// Greedy NMS over a precomputed IoU table.
pub fn greedy_nms_table(ious: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    let n = ious.len();
    let mut removed = vec![false; n];
    let mut keep = Vec::new();
    for i in 0..n {
        if removed[i] {
            continue;
        }
        keep.push(i);
        for j in i + 1..n {
            if ious[i][j] > threshold {
                removed[j] = true;
            }
        }
    }
    keep
}

/// Keep `j` iff no higher-scored prediction overlaps it by more than `threshold`.
pub fn fast_nms(ious: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    let n = ious.len();
    (0..n).filter(|&j| (0..j).all(|i| ious[i][j] <= threshold)).collect()
}

/// 1×1 dynamic convolution, one pixel at a time.
pub fn conv1x1(feature: &FeatureMap, kernel: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; feature.height() * feature.width()];
    for y in 0..feature.height() {
        for x in 0..feature.width() {
            let mut acc = 0.0;
            for (c, k) in kernel.iter().enumerate() {
                acc += feature.get(y, x, c) * k;
            }
            out[y * feature.width() + x] = acc;
        }
    }
    out
}

/// 3×3 zero-padded cross-correlation with a `[channel][ky][kx]` kernel.
pub fn conv3x3(feature: &FeatureMap, kernel: &[f64]) -> Vec<f64> {
    let (h, w, e) = (feature.height() as i64, feature.width() as i64, feature.channels());
    let mut out = vec![0.0; (h * w) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (sy, sx) = (y + dy, x + dx);
                    if sy < 0 || sy >= h || sx < 0 || sx >= w {
                        continue;
                    }
                    for c in 0..e {
                        let k = kernel[c * 9 + ((dy + 1) * 3 + (dx + 1)) as usize];
                        acc += feature.get(sy as usize, sx as usize, c) * k;
                    }
                }
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}

/// Central difference `(g(x + h) - g(x - h)) / 2h`.
pub fn central_difference(g: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (g(x + h) - g(x - h)) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_traces() {
        let ious = vec![vec![0.0, 0.8, 0.1], vec![0.0, 0.0, 0.7], vec![0.0, 0.0, 0.0]];
        let s = matrix_nms_scores(&[0.9, 0.8, 0.7], &ious, DecayFn::Linear);
        assert!((s[1] - 0.16).abs() < 1e-12 && (s[2] - 0.63).abs() < 1e-12);
        let d = matrix_nms_dense(&[0.9, 0.8, 0.7], &ious, DecayFn::Linear);
        assert!(s.iter().zip(&d).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(fast_nms(&ious, 0.5), vec![0]);
    }
}

//! The full reference-check suite behind the `verify` command.
//!
//! Every check draws its inputs from a seeded generator, runs the optimized
//! code and a naive reference from [`crate::oracle`], and reports the first
//! disagreement it finds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bench::SortedScene;
use crate::head::{dynamic_conv_1x1, dynamic_conv_3x3, FeatureMap};
use crate::loss::{dice_loss_values, focal_loss};
use crate::mask::{pairwise_iou_matrix, rle_decode, rle_encode, BinaryMask, IoUMatrix};
use crate::oracle;
use crate::scene::random_scene;
use crate::suppress::{
    fast_nms, hard_nms, matrix_nms, soft_nms_with_ious, DecayFn, ScoredMask, SuppressionResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Random inputs per check.
    pub scenes: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { scenes: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(&VerifyOptions) -> Result<String, String>;

pub const CHECKS: [(&str, Check); 9] = [
    ("iou-matrix", check_iou_matrix),
    ("matrix-nms", check_matrix_nms),
    ("small-n-agreement", check_small_n),
    ("hard-nms", check_hard_nms),
    ("fast-subset-hard", check_fast_subset),
    ("dynamic-conv", check_dynamic_conv),
    ("dice-gradient", check_dice_gradient),
    ("focal-gradient", check_focal_gradient),
    ("rle-round-trip", check_rle),
];

pub fn run_all(options: &VerifyOptions) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|&(name, check)| match check(options) {
            Ok(detail) => CheckOutcome { name, passed: true, detail },
            Err(detail) => CheckOutcome { name, passed: false, detail },
        })
        .collect()
}

pub const DECAYS: [DecayFn; 2] = [DecayFn::Linear, DecayFn::Gaussian { sigma: 0.5 }];

fn rng_for(options: &VerifyOptions, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(options.seed.wrapping_mul(0x100_0000_01b3) ^ salt)
}

fn scene_and_ious(seed: u64, n: usize) -> Result<(Vec<ScoredMask>, IoUMatrix), String> {
    let scene = random_scene(seed, n).map_err(|e| e.to_string())?;
    let sorted: Vec<ScoredMask> = SortedScene::new(&scene).masks.into_iter().cloned().collect();
    let ious = pairwise_iou_matrix(&sorted).map_err(|e| e.to_string())?;
    Ok((sorted, ious))
}

fn table(ious: &IoUMatrix) -> Vec<Vec<f64>> {
    (0..ious.n()).map(|i| ious.row(i).to_vec()).collect()
}

fn scores_of(masks: &[ScoredMask]) -> Vec<f64> {
    masks.iter().map(ScoredMask::score).collect()
}

/// Updated scores laid out by sorted position, zero for dropped entries.
pub fn dense_scores(n: usize, result: &SuppressionResult) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, s) in result.iter() {
        out[i] = s;
    }
    out
}

/// Largest absolute difference between Matrix NMS and the term-by-term
/// reference on one scene.
pub fn matrix_nms_error(scores: &[f64], ious: &IoUMatrix, decay: DecayFn) -> Result<f64, String> {
    let got = matrix_nms(scores, ious, decay).map_err(|e| e.to_string())?;
    let expected = oracle::matrix_nms_scores(scores, &table(ious), decay);
    Ok(dense_scores(scores.len(), &got)
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

fn check_iou_matrix(o: &VerifyOptions) -> Result<String, String> {
    let mut rng = rng_for(o, 1);
    let mut pairs = 0;
    for _ in 0..o.scenes {
        let n = rng.random_range(1..=40);
        let (masks, ious) = scene_and_ious(rng.random(), n)?;
        let refs: Vec<&BinaryMask> = masks.iter().map(ScoredMask::mask).collect();
        let expected = oracle::iou_table(&refs);
        for (i, row) in expected.iter().enumerate() {
            if let Some(j) = (0..n).find(|&j| ious.get(i, j) != row[j]) {
                return Err(format!("iou[{i}][{j}] = {} vs {}", ious.get(i, j), row[j]));
            }
        }
        pairs += n * (n - 1) / 2;
    }
    Ok(format!("{pairs} pairs bit-exact"))
}

fn check_matrix_nms(o: &VerifyOptions) -> Result<String, String> {
    let mut rng = rng_for(o, 2);
    let mut worst = 0.0f64;
    for s in 0..o.scenes {
        let n = rng.random_range(1..=200);
        let (masks, ious) = scene_and_ious(rng.random(), n)?;
        let scores = scores_of(&masks);
        for decay in DECAYS {
            let err = matrix_nms_error(&scores, &ious, decay)?;
            if err > 1e-6 {
                return Err(format!("scene {s} (N={n}, {decay:?}): max error {err:e}"));
            }
            worst = worst.max(err);
        }
    }
    Ok(format!("{} scenes, max error {worst:e}", o.scenes))
}

fn check_small_n(o: &VerifyOptions) -> Result<String, String> {
    let mut rng = rng_for(o, 3);
    for s in 0..o.scenes {
        let n = rng.random_range(1..=2);
        let (masks, ious) = scene_and_ious(rng.random(), n)?;
        let scores = scores_of(&masks);
        for decay in DECAYS {
            let m = matrix_nms(&scores, &ious, decay).map_err(|e| e.to_string())?;
            let soft = soft_nms_with_ious(&scores, &ious, decay, 0.0).map_err(|e| e.to_string())?;
            if m != soft {
                return Err(format!("input {s} ({decay:?}): matrix {m:?} vs soft {soft:?}"));
            }
        }
    }
    Ok(format!("{} inputs identical", o.scenes))
}

fn check_hard_nms(o: &VerifyOptions) -> Result<String, String> {
    let mut rng = rng_for(o, 4);
    for s in 0..o.scenes {
        let n = rng.random_range(1..=80);
        let threshold = rng.random_range(0.1..0.9);
        let (masks, ious) = scene_and_ious(rng.random(), n)?;
        let got = hard_nms(&scores_of(&masks), &ious, threshold).map_err(|e| e.to_string())?;
        let refs: Vec<&BinaryMask> = masks.iter().map(ScoredMask::mask).collect();
        let expected = oracle::greedy_nms(&refs, threshold);
        if got.kept_indices != expected {
            return Err(format!("scene {s}: kept {:?} vs greedy {expected:?}", got.kept_indices));
        }
    }
    Ok(format!("{} scenes identical", o.scenes))
}

fn check_fast_subset(o: &VerifyOptions) -> Result<String, String> {
    let mut rng = rng_for(o, 5);
    let mut strict = 0;
    for s in 0..o.scenes {
        let n = rng.random_range(1..=120);
        let threshold = rng.random_range(0.1..0.9);
        let (masks, ious) = scene_and_ious(rng.random(), n)?;
        let scores = scores_of(&masks);
        let fast = fast_nms(&scores, &ious, threshold).map_err(|e| e.to_string())?;
        let hard = hard_nms(&scores, &ious, threshold).map_err(|e| e.to_string())?;
        if let Some(j) = fast.kept_indices.iter().find(|j| !hard.kept_indices.contains(j)) {
            return Err(format!("scene {s}: fast keeps {j}, hard does not"));
        }
        strict += usize::from(fast.len() < hard.len());
    }
    Ok(format!("{} scenes, {strict} strictly smaller", o.scenes))
}

fn random_feature(rng: &mut ChaCha8Rng, integer: bool) -> FeatureMap {
    let (h, w, e) = (rng.random_range(1..=12), rng.random_range(1..=12), rng.random_range(1..=10));
    let sample = |rng: &mut ChaCha8Rng| -> f64 {
        if integer {
            f64::from(rng.random_range(-8i32..=8))
        } else {
            StandardNormal.sample(rng)
        }
    };
    let data = (0..h * w * e).map(|_| sample(rng)).collect();
    FeatureMap::new(h, w, e, data).expect("finite values")
}

fn random_kernel(rng: &mut ChaCha8Rng, len: usize, integer: bool) -> Vec<f64> {
    (0..len)
        .map(|_| if integer { f64::from(rng.random_range(-8i32..=8)) } else { StandardNormal.sample(rng) })
        .collect()
}

/// Largest relative error of both dynamic convolutions on one random shape,
/// or an error when an integer-valued case is not bit-exact.
pub fn conv_case(rng: &mut ChaCha8Rng, integer: bool) -> Result<f64, String> {
    let f = random_feature(rng, integer);
    let e = f.channels();
    let k1 = random_kernel(rng, e, integer);
    let k3 = random_kernel(rng, 9 * e, integer);
    let pairs = [
        (dynamic_conv_1x1(&f, &k1).map_err(|e| e.to_string())?.values, oracle::conv1x1(&f, &k1)),
        (dynamic_conv_3x3(&f, &k3).map_err(|e| e.to_string())?.values, oracle::conv3x3(&f, &k3)),
    ];
    let mut worst = 0.0f64;
    for (got, expected) in pairs {
        for (a, b) in got.iter().zip(&expected) {
            if integer && a != b {
                return Err(format!("{} on integer input: {a} vs {b}", f.shape_string()));
            }
            let rel = if a == b { 0.0 } else { (a - b).abs() / b.abs().max(f64::MIN_POSITIVE) };
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn check_dynamic_conv(o: &VerifyOptions) -> Result<String, String> {
    let mut rng = rng_for(o, 6);
    let mut worst = 0.0f64;
    for s in 0..o.scenes {
        let rel = conv_case(&mut rng, s % 2 == 1)?;
        if rel > 1e-6 {
            return Err(format!("shape {s}: relative error {rel:e}"));
        }
        worst = worst.max(rel);
    }
    Ok(format!("{} shapes, max relative error {worst:e}", o.scenes))
}

/// Relative error used for gradient checks; absolute below `floor`.
pub fn grad_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Worst gradient error of the dice loss on one random prediction/target pair.
pub fn dice_case(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let len = rng.random_range(4..=64);
    let pred: Vec<f64> = (0..len).map(|_| rng.random_range(0.02..0.98)).collect();
    let target: Vec<f64> = (0..len).map(|_| f64::from(u8::from(rng.random_bool(0.4)))).collect();
    let eps = 1e-6;
    let analytic = dice_loss_values(&pred, &target, eps).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for k in 0..len {
        let g = |x: f64| {
            let mut p = pred.clone();
            p[k] = x;
            dice_loss_values(&p, &target, eps).expect("same length").value
        };
        let numeric = oracle::central_difference(g, pred[k], FD_STEP);
        worst = worst.max(grad_error(analytic.grad[k], numeric, 1e-6));
    }
    Ok(worst)
}

/// Gradient error of the focal loss at one random point.
pub fn focal_case(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let pred = rng.random_range(0.01..0.99);
    let target = rng.random_bool(0.5);
    let alpha = rng.random_range(0.05..0.95);
    let gamma = [0.0, 0.5, 1.0, 2.0, 3.0][rng.random_range(0..5)];
    let analytic = focal_loss(pred, target, alpha, gamma).map_err(|e| e.to_string())?.grad;
    let numeric = oracle::central_difference(
        |x| focal_loss(x, target, alpha, gamma).expect("inside (0, 1)").value,
        pred,
        FD_STEP,
    );
    Ok(grad_error(analytic, numeric, 1e-6))
}

fn check_dice_gradient(o: &VerifyOptions) -> Result<String, String> {
    let mut rng = rng_for(o, 7);
    let mut worst = 0.0f64;
    for s in 0..o.scenes {
        let err = dice_case(&mut rng)?;
        if err > GRAD_TOLERANCE {
            return Err(format!("instance {s}: relative error {err:e}"));
        }
        worst = worst.max(err);
    }
    Ok(format!("{} instances, max relative error {worst:e}", o.scenes))
}

fn check_focal_gradient(o: &VerifyOptions) -> Result<String, String> {
    let mut rng = rng_for(o, 8);
    let mut worst = 0.0f64;
    for s in 0..o.scenes {
        let err = focal_case(&mut rng)?;
        if err > GRAD_TOLERANCE {
            return Err(format!("instance {s}: relative error {err:e}"));
        }
        worst = worst.max(err);
    }
    let v = focal_loss(0.3, true, 0.25, 2.0).map_err(|e| e.to_string())?.value;
    if format!("{v:.5}") != "0.14749" {
        return Err(format!("focal(0.3) = {v}"));
    }
    Ok(format!("{} instances, max relative error {worst:e}", o.scenes))
}

/// A random mask with a random density, including all-empty and all-full.
pub fn random_mask(rng: &mut ChaCha8Rng) -> BinaryMask {
    let (h, w) = (rng.random_range(1..=48), rng.random_range(1..=48));
    let density: f64 = match rng.random_range(0..8) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.0..1.0),
    };
    // runs make the codec work harder than independent pixels
    let mut on = rng.random_bool(density);
    BinaryMask::from_fn(h, w, |_, _| {
        if rng.random_bool(0.2) {
            on = rng.random_bool(density);
        }
        on
    })
    .expect("positive dimensions")
}

fn check_rle(o: &VerifyOptions) -> Result<String, String> {
    let mut rng = rng_for(o, 9);
    for s in 0..o.scenes * 10 {
        let m = random_mask(&mut rng);
        let rle = rle_encode(&m);
        let back = rle_decode(&rle).map_err(|e| e.to_string())?;
        if back != m || rle_encode(&back) != rle {
            return Err(format!("mask {s} ({}x{}) did not round-trip", m.height(), m.width()));
        }
    }
    Ok(format!("{} masks", o.scenes * 10))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let outcomes = run_all(&VerifyOptions { scenes: 20, seed: 5 });
        assert_eq!(outcomes.len(), CHECKS.len());
        for o in &outcomes {
            assert!(o.passed, "{}: {}", o.name, o.detail);
        }
    }

    #[test]
    fn grad_error_floor() {
        assert_eq!(grad_error(0.0, 0.0, 1e-6), 0.0);
        assert!((grad_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
        assert!((grad_error(1e-9, 0.0, 1e-6) - 1e-3).abs() < 1e-15);
    }
}

//! Timing harness for the suppression methods.
//!
//! The IoU matrix is built once and timed on its own; each method is then
//! timed on the precomputed matrix, so the suppression numbers cover the NMS
//! step alone. Every method is checked against its reference implementation
//! before any timing starts, and verification time is never part of a report.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{pairwise_iou_matrix, IoUMatrix};
use crate::oracle;
use crate::suppress::{
    run_method, score_order, soft_nms, DecayFn, Method, ScoredMask, SuppressionConfig, SuppressionResult,
};

pub const MIN_REPEATS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub method: String,
    pub decay: String,
    /// Number of masks.
    pub n: usize,
    pub iou_matrix_ms: f64,
    pub suppression_ms: f64,
    pub kept: usize,
    /// FNV-1a over the kept (index, score) pairs.
    pub checksum: String,
}

pub fn describe_decay(decay: DecayFn) -> String {
    match decay {
        DecayFn::Linear => "linear".into(),
        DecayFn::Gaussian { sigma } => format!("gauss(sigma={sigma})"),
    }
}

pub fn checksum(result: &SuppressionResult) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (idx, score) in result.iter() {
        for b in (idx as u64).to_le_bytes().into_iter().chain(score.to_bits().to_le_bytes()) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    }
}

fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Scores and masks of a scene in descending score order.
pub struct SortedScene<'a> {
    pub scores: Vec<f64>,
    pub masks: Vec<&'a ScoredMask>,
}

impl<'a> SortedScene<'a> {
    pub fn new(scene: &'a [ScoredMask]) -> Self {
        let order = score_order(&scene.iter().map(ScoredMask::score).collect::<Vec<_>>());
        Self {
            scores: order.iter().map(|&i| scene[i].score()).collect(),
            masks: order.iter().map(|&i| &scene[i]).collect(),
        }
    }
}

fn table(ious: &IoUMatrix) -> Vec<Vec<f64>> {
    (0..ious.n()).map(|i| ious.row(i).to_vec()).collect()
}

/// Checks one method on a sorted scene against its reference.
pub fn cross_check(sorted: &SortedScene<'_>, ious: &IoUMatrix, config: &SuppressionConfig) -> Result<()> {
    let got = run_method(&sorted.scores, ious, config)?;
    let t = table(ious);
    let fail = |what: String| Err(Error::Verification(format!("{}: {what}", config.method)));
    match config.method {
        Method::Matrix => {
            let n = sorted.scores.len();
            let expected = if n <= 600 {
                oracle::matrix_nms_scores(&sorted.scores, &t, config.decay)
            } else {
                oracle::matrix_nms_dense(&sorted.scores, &t, config.decay)
            };
            let mut by_index = vec![0.0; n];
            for (i, s) in got.iter() {
                by_index[i] = s;
            }
            for (j, (a, b)) in by_index.iter().zip(&expected).enumerate() {
                if (a - b).abs() > 1e-6 {
                    return fail(format!("score {j}: {a} vs reference {b}"));
                }
            }
        }
        Method::Hard => {
            let expected = oracle::greedy_nms_table(&t, config.iou_threshold);
            if got.kept_indices != expected {
                return fail(format!("kept {:?} vs reference {:?}", got.kept_indices, expected));
            }
        }
        Method::Fast => {
            let expected = oracle::fast_nms(&t, config.iou_threshold);
            if got.kept_indices != expected {
                return fail(format!("kept {:?} vs reference {:?}", got.kept_indices, expected));
            }
        }
        Method::Soft => {
            let owned: Vec<ScoredMask> = sorted.masks.iter().map(|&m| m.clone()).collect();
            let expected = soft_nms(&owned, config.decay, config.score_threshold)?;
            if got != expected {
                return fail("precomputed and on-demand overlaps disagree".into());
            }
        }
    }
    Ok(())
}

/// Times the IoU matrix and each method on one class-agnostic scene.
///
/// One warm-up run precedes `repeats` timed runs; reported times are medians.
/// The suppression time covers the method plus the final threshold / top-k.
pub fn run_bench(
    scene: &[ScoredMask],
    methods: &[Method],
    repeats: usize,
    config: &SuppressionConfig,
) -> Result<Vec<BenchReport>> {
    if repeats < MIN_REPEATS {
        return Err(Error::InvalidParameter(format!("repeats must be at least {MIN_REPEATS}")));
    }
    config.validate()?;
    let sorted = SortedScene::new(scene);
    let n = sorted.scores.len();

    let ious = pairwise_iou_matrix(&sorted.masks.iter().map(|m| m.mask()).collect::<Vec<_>>())?;
    for &method in methods {
        cross_check(&sorted, &ious, &SuppressionConfig { method, ..*config })?;
    }

    let mut iou_times = Vec::with_capacity(repeats);
    let plain: Vec<_> = sorted.masks.iter().map(|m| m.mask()).collect();
    std::hint::black_box(pairwise_iou_matrix(&plain)?);
    for _ in 0..repeats {
        let t0 = Instant::now();
        std::hint::black_box(pairwise_iou_matrix(&plain)?);
        iou_times.push(t0.elapsed());
    }
    let iou_ms = millis(median(iou_times));

    let mut reports = Vec::with_capacity(methods.len());
    for &method in methods {
        let cfg = SuppressionConfig { method, ..*config };
        let run = || -> Result<SuppressionResult> {
            Ok(run_method(&sorted.scores, &ious, &cfg)?.finalize(cfg.score_threshold, cfg.top_k))
        };
        let reference = run()?;
        let sum = checksum(&reference);
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t0 = Instant::now();
            let r = std::hint::black_box(run()?);
            times.push(t0.elapsed());
            if checksum(&r) != sum {
                return Err(Error::Verification(format!("{method}: output changed between repeats")));
            }
        }
        reports.push(BenchReport {
            method: method.name().into(),
            decay: match method {
                Method::Soft | Method::Matrix => describe_decay(cfg.decay),
                Method::Hard | Method::Fast => format!("iou>{}", cfg.iou_threshold),
            },
            n,
            iou_matrix_ms: iou_ms,
            suppression_ms: millis(median(times)),
            kept: reference.len(),
            checksum: format!("{sum:016x}"),
        });
    }
    Ok(reports)
}

/// Median suppression time of one method on a precomputed matrix.
pub fn time_method(
    scores: &[f64],
    ious: &IoUMatrix,
    config: &SuppressionConfig,
    repeats: usize,
) -> Result<Duration> {
    let run = || -> Result<SuppressionResult> {
        Ok(run_method(scores, ious, config)?.finalize(config.score_threshold, config.top_k))
    };
    std::hint::black_box(run()?);
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        std::hint::black_box(run()?);
        times.push(t0.elapsed());
    }
    Ok(median(times))
}

pub fn format_table(reports: &[BenchReport]) -> String {
    let mut out = format!(
        "{:<8} {:<18} {:>6} {:>12} {:>14} {:>6}  {}\n",
        "method", "decay", "N", "iou_ms", "suppress_ms", "kept", "checksum"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<8} {:<18} {:>6} {:>12.4} {:>14.4} {:>6}  {}\n",
            r.method, r.decay, r.n, r.iou_matrix_ms, r.suppression_ms, r.kept, r.checksum
        ));
    }
    out
}

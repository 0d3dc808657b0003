//! Mask suppression: greedy (hard) NMS, Soft-NMS, Fast NMS and Matrix NMS.
//!
//! The method kernels take scores sorted in descending order together with the
//! strictly upper-triangular IoU matrix over the same ordering. [`suppress`]
//! handles sorting, per-category grouping and the final threshold / top-k.
//!
//! Hard and Soft NMS are sequential: each decision depends on the previous
//! ones. Fast and Matrix NMS are single passes over the matrix.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{iou_from_counts, pairwise_iou_matrix, BinaryMask, IoUMatrix};

pub const DEFAULT_SIGMA: f64 = 0.5;
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.05;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_TOP_K: usize = 100;

/// A binary mask with its confidence and class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredMask {
    mask: BinaryMask,
    score: f64,
    category: u32,
}

impl ScoredMask {
    pub fn new(mask: BinaryMask, score: f64, category: u32) -> Result<Self> {
        if !(score > 0.0 && score <= 1.0) {
            return Err(Error::Domain { value: score, domain: "score in (0, 1]" });
        }
        Ok(Self { mask, score, category })
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn category(&self) -> u32 {
        self.category
    }

    pub fn into_mask(self) -> BinaryMask {
        self.mask
    }
}

impl AsRef<BinaryMask> for ScoredMask {
    fn as_ref(&self) -> &BinaryMask {
        &self.mask
    }
}

/// Decrement function applied to overlaps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DecayFn {
    /// `f(iou) = 1 - iou`
    Linear,
    /// `f(iou) = exp(-iou² / sigma)`
    #[serde(rename = "gauss")]
    Gaussian { sigma: f64 },
}

impl Default for DecayFn {
    fn default() -> Self {
        DecayFn::Gaussian { sigma: DEFAULT_SIGMA }
    }
}

impl DecayFn {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        let d = DecayFn::Gaussian { sigma };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DecayFn::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::Domain { value: sigma, domain: "sigma > 0" })
            }
            _ => Ok(()),
        }
    }

    /// Penalty `f(iou)` one mask applies to another.
    #[inline]
    pub fn penalty(&self, iou: f64) -> f64 {
        match *self {
            DecayFn::Linear => 1.0 - iou,
            DecayFn::Gaussian { sigma } => (-(iou * iou) / sigma).exp(),
        }
    }

    /// `f(iou) / f(cmax)`. The linear form is `+inf` when `cmax = 1`: a
    /// suppressor that is itself certainly suppressed never wins the min.
    #[inline]
    pub fn ratio(&self, iou: f64, cmax: f64) -> f64 {
        match *self {
            DecayFn::Linear => {
                if cmax >= 1.0 {
                    f64::INFINITY
                } else {
                    (1.0 - iou) / (1.0 - cmax)
                }
            }
            DecayFn::Gaussian { sigma } => (-(iou * iou - cmax * cmax) / sigma).exp(),
        }
    }
}

/// `(1 - iou) / (1 - cmax)`; errors at the `cmax = 1` singularity.
pub fn decay_linear(iou: f64, cmax: f64) -> Result<f64> {
    check_unit("iou", iou)?;
    check_unit("cmax", cmax)?;
    if cmax >= 1.0 {
        return Err(Error::Domain { value: cmax, domain: "cmax < 1 for linear decay" });
    }
    Ok(DecayFn::Linear.ratio(iou, cmax))
}

/// `exp(-(iou² - cmax²) / sigma)`
pub fn decay_gauss(iou: f64, cmax: f64, sigma: f64) -> Result<f64> {
    check_unit("iou", iou)?;
    check_unit("cmax", cmax)?;
    Ok(DecayFn::gaussian(sigma)?.ratio(iou, cmax))
}

fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidParameter(format!("{name} = {v} not in [0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Hard,
    Soft,
    Fast,
    Matrix,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Hard, Method::Soft, Method::Fast, Method::Matrix];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Hard => "hard",
            Method::Soft => "soft",
            Method::Fast => "fast",
            Method::Matrix => "matrix",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Method::Hard),
            "soft" => Ok(Method::Soft),
            "fast" => Ok(Method::Fast),
            "matrix" => Ok(Method::Matrix),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuppressionConfig {
    pub method: Method,
    /// Used by soft and matrix.
    pub decay: DecayFn,
    /// Used by hard and fast.
    pub iou_threshold: f64,
    pub score_threshold: f64,
    pub top_k: usize,
    /// Suppress across categories instead of within each one.
    pub class_agnostic: bool,
}

impl Default for SuppressionConfig {
    fn default() -> Self {
        Self {
            method: Method::Matrix,
            decay: DecayFn::default(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            top_k: DEFAULT_TOP_K,
            class_agnostic: false,
        }
    }
}

impl SuppressionConfig {
    pub fn validate(&self) -> Result<()> {
        self.decay.validate()?;
        check_unit("iou_threshold", self.iou_threshold)?;
        check_unit("score_threshold", self.score_threshold)?;
        if self.top_k == 0 {
            return Err(Error::InvalidParameter("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Kept indices and their (possibly decayed) scores, position by position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuppressionResult {
    pub kept_indices: Vec<usize>,
    pub updated_scores: Vec<f64>,
}

impl SuppressionResult {
    pub fn len(&self) -> usize {
        self.kept_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept_indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.kept_indices.iter().copied().zip(self.updated_scores.iter().copied())
    }

    /// Drops scores below `score_threshold`, orders by descending score
    /// (ties by index) and keeps the first `top_k`.
    pub fn finalize(self, score_threshold: f64, top_k: usize) -> Self {
        let mut pairs: Vec<(usize, f64)> = self.iter().filter(|&(_, s)| s >= score_threshold).collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        pairs.truncate(top_k);
        let (kept_indices, updated_scores) = pairs.into_iter().unzip();
        Self { kept_indices, updated_scores }
    }

    fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let (kept_indices, updated_scores) = pairs.into_iter().unzip();
        Self { kept_indices, updated_scores }
    }
}

/// Descending order of `scores`, ties broken by ascending index.
pub fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable, so equal scores keep index order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

pub fn sort_by_score(items: &[ScoredMask]) -> Vec<usize> {
    let scores: Vec<f64> = items.iter().map(ScoredMask::score).collect();
    score_order(&scores)
}

fn check_inputs(scores: &[f64], ious: &IoUMatrix) -> Result<()> {
    if scores.len() != ious.n() {
        return Err(Error::dims(
            format!("{} scores", ious.n()),
            format!("{} scores", scores.len()),
        ));
    }
    if let Some(pos) = scores.windows(2).position(|w| w[1] > w[0]) {
        return Err(Error::Unsorted(pos + 1));
    }
    Ok(())
}

/// Column-wise max of the strictly upper-triangular matrix: for each `j`, the
/// largest overlap with any higher-scored prediction.
pub fn column_max(ious: &IoUMatrix) -> Vec<f64> {
    let n = ious.n();
    let mut cmax = vec![0.0; n];
    for i in 0..n {
        let row = &ious.row(i)[i + 1..];
        for (c, &v) in cmax[i + 1..].iter_mut().zip(row) {
            if v > *c {
                *c = v;
            }
        }
    }
    cmax
}

// Plain compare-and-select (no NaN handling) so the inner loops vectorize.
#[inline(always)]
fn select_max(a: f64, b: f64) -> f64 {
    if b > a {
        b
    } else {
        a
    }
}

#[inline(always)]
fn select_min(a: f64, b: f64) -> f64 {
    if b < a {
        b
    } else {
        a
    }
}

/// Matrix NMS decay factor for every prediction.
///
/// `decay_j = min_i f(iou_ij) / f(cmax_i)` over higher-scored `i`, with
/// `cmax_i` the column max of `i`. Terms below the diagonal are at least 1
/// while the `i = 0` term is at most 1, so only the upper triangle is read.
/// For the Gaussian form the min is taken in the exponent and one `exp` is
/// evaluated per column. Rows are visited in order, so `cmax_i` is final by
/// the time row `i` is reached and the whole computation is one pass.
pub fn matrix_decay(ious: &IoUMatrix, decay: DecayFn) -> Vec<f64> {
    let n = ious.n();
    let mut cmax = vec![0.0f64; n];
    match decay {
        DecayFn::Gaussian { sigma } => {
            // largest iou_ij² - cmax_i² seen so far per column
            let mut gap = vec![f64::NEG_INFINITY; n];
            for i in 0..n {
                let ci = cmax[i];
                let ci2 = ci * ci;
                let row = &ious.row(i)[i + 1..];
                for ((c, g), &v) in cmax[i + 1..].iter_mut().zip(&mut gap[i + 1..]).zip(row) {
                    *c = select_max(*c, v);
                    *g = select_max(*g, v * v - ci2);
                }
            }
            gap.iter()
                .enumerate()
                .map(|(j, &g)| if j == 0 { 1.0 } else { (-g / sigma).exp().min(1.0) })
                .collect()
        }
        DecayFn::Linear => {
            let mut best = vec![f64::INFINITY; n];
            for i in 0..n {
                let ci = cmax[i];
                let row = &ious.row(i)[i + 1..];
                if ci >= 1.0 {
                    // every ratio in this row is +inf
                    for (c, &v) in cmax[i + 1..].iter_mut().zip(row) {
                        *c = select_max(*c, v);
                    }
                    continue;
                }
                let inv = 1.0 / (1.0 - ci);
                for ((c, b), &v) in cmax[i + 1..].iter_mut().zip(&mut best[i + 1..]).zip(row) {
                    *c = select_max(*c, v);
                    *b = select_min(*b, (1.0 - v) * inv);
                }
            }
            best.iter()
                .enumerate()
                .map(|(j, &b)| if j == 0 || b.is_infinite() { 1.0 } else { b.min(1.0) })
                .collect()
        }
    }
}

/// Matrix NMS over scores sorted in descending order. Keeps every prediction
/// whose decayed score stays positive; thresholding and top-k are left to
/// [`SuppressionResult::finalize`].
pub fn matrix_nms(scores: &[f64], ious: &IoUMatrix, decay: DecayFn) -> Result<SuppressionResult> {
    check_inputs(scores, ious)?;
    decay.validate()?;
    let factors = matrix_decay(ious, decay);
    Ok(SuppressionResult::from_pairs(
        scores
            .iter()
            .zip(&factors)
            .map(|(s, d)| s * d)
            .enumerate()
            .filter(|&(_, s)| s > 0.0),
    ))
}

/// Greedy NMS: walk in score order and keep a prediction iff its overlap with
/// every previously kept one is at most `threshold`.
pub fn hard_nms(scores: &[f64], ious: &IoUMatrix, threshold: f64) -> Result<SuppressionResult> {
    check_inputs(scores, ious)?;
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..scores.len() {
        if kept.iter().all(|&k| ious.get(k, j) <= threshold) {
            kept.push(j);
        }
    }
    Ok(SuppressionResult::from_pairs(kept.into_iter().map(|j| (j, scores[j]))))
}

/// Fast NMS: keep `j` iff its column max is at most `threshold`. Already
/// removed predictions still suppress, so this removes at least as much as
/// [`hard_nms`].
pub fn fast_nms(scores: &[f64], ious: &IoUMatrix, threshold: f64) -> Result<SuppressionResult> {
    check_inputs(scores, ious)?;
    let cmax = column_max(ious);
    Ok(SuppressionResult::from_pairs(
        cmax.iter()
            .enumerate()
            .filter(|&(_, &c)| c <= threshold)
            .map(|(j, _)| (j, scores[j])),
    ))
}

/// Sequential Soft-NMS. Repeatedly selects the highest current score, keeps it
/// and multiplies every remaining score by `f(iou)` against the selection.
/// Predictions whose score drops below `score_threshold` leave the pool.
fn soft_nms_by(
    scores: &[f64],
    decay: DecayFn,
    score_threshold: f64,
    iou: impl Fn(usize, usize) -> f64,
) -> SuppressionResult {
    let mut current = scores.to_vec();
    let mut live: Vec<usize> = (0..scores.len()).collect();
    let mut kept = Vec::new();
    while !live.is_empty() {
        // live stays in ascending index order, so the first max wins ties
        let mut best = 0;
        for (pos, &j) in live.iter().enumerate().skip(1) {
            if current[j] > current[live[best]] {
                best = pos;
            }
        }
        let sel = live.remove(best);
        kept.push((sel, current[sel]));
        for &j in &live {
            current[j] *= decay.penalty(iou(sel, j));
        }
        live.retain(|&j| current[j] >= score_threshold && current[j] > 0.0);
    }
    SuppressionResult::from_pairs(kept)
}

/// Soft-NMS computing mask overlaps on demand, as the reference algorithm does.
pub fn soft_nms(masks: &[ScoredMask], decay: DecayFn, score_threshold: f64) -> Result<SuppressionResult> {
    decay.validate()?;
    let scores: Vec<f64> = masks.iter().map(ScoredMask::score).collect();
    if let Some(pos) = scores.windows(2).position(|w| w[1] > w[0]) {
        return Err(Error::Unsorted(pos + 1));
    }
    if let Some(first) = masks.first() {
        for m in &masks[1..] {
            if m.mask.height() != first.mask.height() || m.mask.width() != first.mask.width() {
                return Err(Error::dims(
                    format!("{}x{}", first.mask.height(), first.mask.width()),
                    format!("{}x{}", m.mask.height(), m.mask.width()),
                ));
            }
        }
    }
    let areas: Vec<u64> = masks.iter().map(|m| m.mask.area()).collect();
    Ok(soft_nms_by(&scores, decay, score_threshold, |i, j| {
        let inter = masks[i].mask.intersection(&masks[j].mask).expect("dimensions checked above");
        iou_from_counts(inter, areas[i], areas[j])
    }))
}

/// Soft-NMS reading overlaps from a precomputed matrix.
pub fn soft_nms_with_ious(
    scores: &[f64],
    ious: &IoUMatrix,
    decay: DecayFn,
    score_threshold: f64,
) -> Result<SuppressionResult> {
    check_inputs(scores, ious)?;
    decay.validate()?;
    Ok(soft_nms_by(scores, decay, score_threshold, |i, j| ious.pair(i, j)))
}

/// Runs one method on sorted scores and their IoU matrix, before the final
/// threshold / top-k.
pub fn run_method(scores: &[f64], ious: &IoUMatrix, config: &SuppressionConfig) -> Result<SuppressionResult> {
    match config.method {
        Method::Hard => hard_nms(scores, ious, config.iou_threshold),
        Method::Fast => fast_nms(scores, ious, config.iou_threshold),
        Method::Soft => soft_nms_with_ious(scores, ious, config.decay, config.score_threshold),
        Method::Matrix => matrix_nms(scores, ious, config.decay),
    }
}

/// Full suppression over an unsorted, multi-class list. Indices in the result
/// refer to `masks`.
pub fn suppress(masks: &[ScoredMask], config: &SuppressionConfig) -> Result<SuppressionResult> {
    config.validate()?;
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (idx, m) in masks.iter().enumerate() {
        let key = if config.class_agnostic { 0 } else { m.category };
        groups.entry(key).or_default().push(idx);
    }

    let mut merged = Vec::with_capacity(masks.len());
    for members in groups.values() {
        let scores: Vec<f64> = members.iter().map(|&i| masks[i].score).collect();
        let order = score_order(&scores);
        let sorted: Vec<usize> = order.iter().map(|&o| members[o]).collect();
        let sorted_scores: Vec<f64> = sorted.iter().map(|&i| masks[i].score).collect();
        let sorted_masks: Vec<&BinaryMask> = sorted.iter().map(|&i| &masks[i].mask).collect();
        let ious = pairwise_iou_matrix(&sorted_masks)?;
        let result = run_method(&sorted_scores, &ious, config)?;
        merged.extend(result.iter().map(|(pos, s)| (sorted[pos], s)));
    }
    Ok(SuppressionResult::from_pairs(merged).finalize(config.score_threshold, config.top_k))
}

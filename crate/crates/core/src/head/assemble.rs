use serde::{Deserialize, Serialize};

use super::fusion::{fuse_pyramid, PyramidLevels};
use super::ops::{dynamic_conv_1x1, dynamic_conv_3x3};
use super::tensor::{CategoryGrid, FeatureMap, KernelGrid, KernelKind, MaskLogits};
use crate::error::{Error, Result};
use crate::mask::{mask_to_box, BinaryMask, PixelBox};
use crate::suppress::{suppress, ScoredMask, SuppressionConfig};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.1;
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssembleConfig {
    /// Cells/classes scoring at or below this are skipped.
    pub confidence_threshold: f64,
    /// Soft-mask binarization threshold (values equal to it are foreground).
    pub mask_threshold: f64,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
        }
    }
}

/// Convolves the kernel of cell `k` with the mask feature.
pub fn cell_logits(kernels: &KernelGrid, k: usize, feature: &FeatureMap) -> Result<MaskLogits> {
    if k >= kernels.grid_size() * kernels.grid_size() {
        let s = kernels.grid_size();
        return Err(Error::OutOfRange { row: k / s.max(1), col: k % s.max(1), size: s });
    }
    match kernels.kind() {
        KernelKind::Conv1x1 => dynamic_conv_1x1(feature, kernels.kernel(k)),
        KernelKind::Conv3x3 => dynamic_conv_3x3(feature, kernels.kernel(k)),
    }
}

fn check_shapes(category: &CategoryGrid, kernels: &KernelGrid, feature: &FeatureMap) -> Result<()> {
    if category.grid_size() != kernels.grid_size() {
        return Err(Error::dims(
            format!("kernel grid {}", category.grid_size()),
            format!("kernel grid {}", kernels.grid_size()),
        ));
    }
    if kernels.feature_channels() != feature.channels() {
        return Err(Error::dims(
            format!("{} feature channels", kernels.feature_channels()),
            format!("{} feature channels", feature.channels()),
        ));
    }
    Ok(())
}

fn assemble_cell(
    k: usize,
    category: &CategoryGrid,
    kernels: &KernelGrid,
    feature: &FeatureMap,
    config: &AssembleConfig,
) -> Result<Vec<ScoredMask>> {
    let scores = category.scores(k);
    if scores.iter().all(|&s| s <= config.confidence_threshold) {
        return Ok(Vec::new());
    }
    let mask = cell_logits(kernels, k, feature)?.sigmoid().binarize(config.mask_threshold);
    if mask.is_empty() {
        return Ok(Vec::new());
    }
    scores
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s > config.confidence_threshold)
        .map(|(c, &s)| ScoredMask::new(mask.clone(), s, c as u32))
        .collect()
}

/// Turns every confident (cell, class) pair into a binary instance mask.
/// Output is ordered by cell index, then class, whatever the thread count.
pub fn assemble_masks(
    category: &CategoryGrid,
    kernels: &KernelGrid,
    feature: &FeatureMap,
    config: &AssembleConfig,
) -> Result<Vec<ScoredMask>> {
    check_shapes(category, kernels, feature)?;
    let cells = category.grid_size() * category.grid_size();
    let per_cell = |k| assemble_cell(k, category, kernels, feature, config);
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<Vec<ScoredMask>>> = {
        use rayon::prelude::*;
        (0..cells).into_par_iter().map(per_cell).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<Vec<ScoredMask>>> = (0..cells).map(per_cell).collect();
    let mut out = Vec::new();
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// A surviving instance. `index` points into the assembled mask list.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub index: usize,
    pub mask: BinaryMask,
    pub bbox: PixelBox,
    pub score: f64,
    pub category: u32,
}

/// Suppresses an assembled mask list and attaches a box to each survivor.
pub fn finish_instances(masks: &[ScoredMask], config: &SuppressionConfig) -> Result<Vec<Instance>> {
    let kept = suppress(masks, config)?;
    kept.iter()
        .map(|(index, score)| {
            let m = &masks[index];
            Ok(Instance {
                index,
                mask: m.mask().clone(),
                bbox: mask_to_box(m.mask())?,
                score,
                category: m.category(),
            })
        })
        .collect()
}

/// Fusion, mask assembly, suppression and box extraction end to end.
pub fn inference_pipeline(
    category: &CategoryGrid,
    kernels: &KernelGrid,
    pyramid: &PyramidLevels,
    config: &SuppressionConfig,
) -> Result<Vec<Instance>> {
    let feature = fuse_pyramid(pyramid)?;
    let masks = assemble_masks(category, kernels, &feature, &AssembleConfig::default())?;
    finish_instances(&masks, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::ops::coord_channels;
    use crate::mask::mask_iou;

    // Features: [x, y, 1]. A 1x1 kernel (a, b, c) fires where a*x + b*y + c >= 0.
    fn plane_feature(h: usize, w: usize) -> FeatureMap {
        coord_channels(h, w)
            .unwrap()
            .concat_channels(&FeatureMap::from_fn(h, w, 1, |_, _, _| 1.0).unwrap())
            .unwrap()
    }

    #[test]
    fn nothing_confident_means_no_masks() {
        let f = plane_feature(4, 4);
        let cat = CategoryGrid::new(2, 2, vec![0.1, 0.05, 0.0, 0.1, 0.02, 0.0, 0.1, 0.1]).unwrap();
        let ker = KernelGrid::new(2, 3, 3, vec![1.0; 12]).unwrap();
        assert!(assemble_masks(&cat, &ker, &f, &AssembleConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn saturated_kernel_gives_full_mask() {
        let f = plane_feature(5, 6);
        let mut scores = vec![0.0; 4];
        scores[2] = 0.9;
        let cat = CategoryGrid::new(2, 1, scores).unwrap();
        let mut k = vec![0.0; 12];
        k[2 * 3 + 2] = 50.0;
        let ker = KernelGrid::new(2, 3, 3, k).unwrap();
        let masks = assemble_masks(&cat, &ker, &f, &AssembleConfig::default()).unwrap();
        assert_eq!(masks.len(), 1);
        assert_eq!(masks[0].score(), 0.9);
        assert_eq!(masks[0].mask().area(), 30);
    }

    #[test]
    fn two_overlapping_halfplanes() {
        // 8 wide: x = -1 + 2c/7. Cell 0 fires for x <= 0.2 (cols 0..=4), cell 1
        // for x >= -0.2 (cols 3..=7).
        let f = plane_feature(4, 8);
        let cat = CategoryGrid::new(2, 1, vec![0.8, 0.7, 0.0, 0.0]).unwrap();
        let ker = KernelGrid::new(2, 3, 3, vec![-10.0, 0.0, 2.0, 10.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let masks = assemble_masks(&cat, &ker, &f, &AssembleConfig::default()).unwrap();
        assert_eq!(masks.len(), 2);
        let left = BinaryMask::from_fn(4, 8, |_, x| x <= 4).unwrap();
        let right = BinaryMask::from_fn(4, 8, |_, x| x >= 3).unwrap();
        assert_eq!(masks[0].mask(), &left);
        assert_eq!(masks[1].mask(), &right);
        // painted by hand: overlap cols 3..=4 (8 px), union all 32 px
        assert_eq!(mask_iou(masks[0].mask(), masks[1].mask()).unwrap(), 8.0 / 32.0);
    }

    #[test]
    fn shape_mismatch_errors() {
        let f = plane_feature(4, 4);
        let cat = CategoryGrid::new(3, 1, vec![0.5; 9]).unwrap();
        let ker = KernelGrid::new(2, 3, 3, vec![1.0; 12]).unwrap();
        assert!(assemble_masks(&cat, &ker, &f, &AssembleConfig::default()).is_err());
        let cat = CategoryGrid::new(2, 1, vec![0.5; 4]).unwrap();
        let ker = KernelGrid::new(2, 4, 4, vec![1.0; 16]).unwrap();
        assert!(assemble_masks(&cat, &ker, &f, &AssembleConfig::default()).is_err());
    }
}

//! Fixed-weight fusion of pyramid levels into one mask feature at the finest
//! scale.
//!
//! Level `l` (scale `1/4 · 2^-l`) runs `l` stages of
//! 3×3 conv → group norm → ReLU → 2× bilinear upsample, which brings it to the
//! finest resolution. The results are summed and passed through
//! 1×1 conv → group norm → ReLU. When more than one level is present, the
//! deepest level gets the two coordinate channels appended before its first
//! convolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{bilinear_upsample_2x, coord_channels, default_groups, relu, Conv2d, GroupNorm, DEFAULT_GN_EPSILON};
use super::tensor::FeatureMap;
use crate::error::{Error, Result};

pub const MAX_LEVELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionStage {
    pub conv: Conv2d,
    pub norm: GroupNorm,
}

impl FusionStage {
    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        let x = self.norm.forward(&self.conv.forward(input)?)?;
        Ok(bilinear_upsample_2x(&relu(&x)))
    }
}

/// Every parameter of the fusion branch. `levels[l]` holds the `l` stages of
/// pyramid level `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub levels: Vec<Vec<FusionStage>>,
    pub out_conv: Conv2d,
    pub out_norm: GroupNorm,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

// Variance-preserving uniform init.
fn seeded_conv(rng: &mut ChaCha8Rng, cin: usize, cout: usize, ks: usize) -> Conv2d {
    let fan_in = (cin * ks * ks) as f64;
    let weight = uniform(rng, cout * cin * ks * ks, (3.0 / fan_in).sqrt());
    let bias = uniform(rng, cout, 0.1);
    Conv2d { in_channels: cin, out_channels: cout, kernel_size: ks, weight, bias }
}

fn seeded_norm(rng: &mut ChaCha8Rng, channels: usize) -> GroupNorm {
    GroupNorm {
        groups: default_groups(channels),
        epsilon: DEFAULT_GN_EPSILON,
        gamma: (0..channels).map(|_| rng.random_range(0.5..1.5)).collect(),
        beta: uniform(rng, channels, 0.5),
    }
}

impl FusionWeights {
    /// Deterministic pseudo-random weights for pyramids whose levels carry
    /// `level_channels` channels (finest first). The hidden width equals the
    /// finest level's channel count because that level enters the sum as is.
    pub fn seeded(seed: u64, level_channels: &[usize], out_channels: usize) -> Result<Self> {
        check_level_count(level_channels.len())?;
        let mid = level_channels[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let deepest = level_channels.len() - 1;
        let levels = level_channels
            .iter()
            .enumerate()
            .map(|(l, &c)| {
                let first_in = if l == deepest && l > 0 { c + 2 } else { c };
                (0..l)
                    .map(|s| FusionStage {
                        conv: seeded_conv(&mut rng, if s == 0 { first_in } else { mid }, mid, 3),
                        norm: seeded_norm(&mut rng, mid),
                    })
                    .collect()
            })
            .collect();
        let weights = Self {
            levels,
            out_conv: seeded_conv(&mut rng, mid, out_channels, 1),
            out_norm: seeded_norm(&mut rng, out_channels),
        };
        Ok(weights)
    }

    pub fn out_channels(&self) -> usize {
        self.out_conv.out_channels
    }
}

fn check_level_count(n: usize) -> Result<()> {
    if n == 0 || n > MAX_LEVELS {
        return Err(Error::InvalidParameter(format!("pyramid needs 1..={MAX_LEVELS} levels, got {n}")));
    }
    Ok(())
}

/// Pyramid features (finest first, each level half the size of the previous)
/// with the fusion parameters that merge them.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevels {
    levels: Vec<FeatureMap>,
    weights: FusionWeights,
}

impl PyramidLevels {
    pub fn new(levels: Vec<FeatureMap>, weights: FusionWeights) -> Result<Self> {
        check_level_count(levels.len())?;
        if weights.levels.len() != levels.len() {
            return Err(Error::dims(
                format!("{} levels of weights", levels.len()),
                format!("{} levels of weights", weights.levels.len()),
            ));
        }
        let (h0, w0) = (levels[0].height(), levels[0].width());
        let mid = levels[0].channels();
        let deepest = levels.len() - 1;
        for (l, (level, stages)) in levels.iter().zip(&weights.levels).enumerate() {
            if (level.height() << l, level.width() << l) != (h0, w0) {
                return Err(Error::dims(
                    format!("level {l} of {}x{}", h0 >> l, w0 >> l),
                    format!("{}x{}", level.height(), level.width()),
                ));
            }
            if stages.len() != l {
                return Err(Error::dims(format!("{l} stages at level {l}"), format!("{}", stages.len())));
            }
            let mut cin = level.channels() + if l == deepest && l > 0 { 2 } else { 0 };
            for stage in stages {
                stage.conv.validate()?;
                if stage.conv.in_channels != cin || stage.conv.out_channels != mid || stage.conv.kernel_size != 3 {
                    return Err(Error::dims(
                        format!("3x3 conv {cin}->{mid} at level {l}"),
                        format!(
                            "{0}x{0} conv {1}->{2}",
                            stage.conv.kernel_size, stage.conv.in_channels, stage.conv.out_channels
                        ),
                    ));
                }
                cin = mid;
            }
        }
        weights.out_conv.validate()?;
        if weights.out_conv.in_channels != mid || weights.out_conv.kernel_size != 1 {
            return Err(Error::dims(format!("1x1 conv from {mid}"), "mismatched output conv"));
        }
        Ok(Self { levels, weights })
    }

    pub fn levels(&self) -> &[FeatureMap] {
        &self.levels
    }

    pub fn weights(&self) -> &FusionWeights {
        &self.weights
    }
}

pub fn fuse_pyramid(pyramid: &PyramidLevels) -> Result<FeatureMap> {
    let deepest = pyramid.levels.len() - 1;
    let mut sum: Option<FeatureMap> = None;
    for (l, (level, stages)) in pyramid.levels.iter().zip(&pyramid.weights.levels).enumerate() {
        let mut x = if l == deepest && l > 0 {
            level.concat_channels(&coord_channels(level.height(), level.width())?)?
        } else {
            level.clone()
        };
        for stage in stages {
            x = stage.forward(&x)?;
        }
        sum = Some(match sum {
            None => x,
            Some(s) => s.add(&x)?,
        });
    }
    let sum = sum.expect("at least one level");
    let w = &pyramid.weights;
    Ok(relu(&w.out_norm.forward(&w.out_conv.forward(&sum)?)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::ops::group_norm;

    fn random_levels(seed: u64, h: usize, w: usize, channels: &[usize]) -> Vec<FeatureMap> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        channels
            .iter()
            .enumerate()
            .map(|(l, &c)| FeatureMap::from_fn(h >> l, w >> l, c, |_, _, _| rng.random_range(-1.0..1.0)).unwrap())
            .collect()
    }

    #[test]
    fn zero_pyramid_zero_weights() {
        let chans = [4, 4, 4, 4];
        let mut weights = FusionWeights::seeded(1, &chans, 4).unwrap();
        for stage in weights.levels.iter_mut().flatten() {
            stage.conv.weight.iter_mut().for_each(|v| *v = 0.0);
            stage.conv.bias.iter_mut().for_each(|v| *v = 0.0);
            stage.norm.beta.iter_mut().for_each(|v| *v = 0.0);
        }
        weights.out_conv.weight.iter_mut().for_each(|v| *v = 0.0);
        weights.out_conv.bias.iter_mut().for_each(|v| *v = 0.0);
        weights.out_norm.beta.iter_mut().for_each(|v| *v = 0.0);
        let levels = chans
            .iter()
            .enumerate()
            .map(|(l, &c)| FeatureMap::zeros(16 >> l, 8 >> l, c).unwrap())
            .collect();
        let out = fuse_pyramid(&PyramidLevels::new(levels, weights).unwrap()).unwrap();
        assert_eq!((out.height(), out.width(), out.channels()), (16, 8, 4));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_level_is_norm_relu_of_input() {
        let level = random_levels(2, 6, 6, &[4]).remove(0);
        let mut weights = FusionWeights::seeded(3, &[4], 4).unwrap();
        weights.out_conv = Conv2d::new(
            4,
            4,
            1,
            (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect(),
            vec![0.0; 4],
        )
        .unwrap();
        weights.out_norm = GroupNorm::identity(4);
        let out = fuse_pyramid(&PyramidLevels::new(vec![level.clone()], weights).unwrap()).unwrap();
        let expected = relu(&group_norm(&level, 4, DEFAULT_GN_EPSILON, &[1.0; 4], &[0.0; 4]).unwrap());
        assert_eq!(out, expected);
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        let chans = [4, 6, 6, 6];
        let weights = FusionWeights::seeded(1, &chans, 8).unwrap();
        let mut levels = random_levels(1, 16, 16, &chans);
        levels[2] = FeatureMap::zeros(3, 4, 6).unwrap();
        assert!(PyramidLevels::new(levels, weights.clone()).is_err());
        let levels = random_levels(1, 16, 16, &[4, 6, 6, 5]);
        assert!(PyramidLevels::new(levels, weights.clone()).is_err());
        assert!(PyramidLevels::new(random_levels(1, 16, 16, &chans[..3]), weights).is_err());
        assert!(FusionWeights::seeded(0, &[], 4).is_err());
    }

    #[test]
    fn weights_serde_round_trip() {
        let w = FusionWeights::seeded(9, &[4, 4], 4).unwrap();
        let text = serde_json::to_string(&w).unwrap();
        assert_eq!(serde_json::from_str::<FusionWeights>(&text).unwrap(), w);
    }
}

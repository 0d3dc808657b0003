use serde::{Deserialize, Serialize};

use super::tensor::{FeatureMap, MaskLogits};
use crate::error::{Error, Result};

pub const DEFAULT_GN_EPSILON: f64 = 1e-5;

/// Flattened index `k = i * S + j` of grid cell `(i, j)`.
pub fn grid_index(i: usize, j: usize, grid_size: usize) -> Result<usize> {
    if i >= grid_size || j >= grid_size {
        return Err(Error::OutOfRange { row: i, col: j, size: grid_size });
    }
    Ok(i * grid_size + j)
}

fn normalized(idx: usize, len: usize) -> f64 {
    if len == 1 {
        0.0
    } else {
        // integer numerator keeps the map exactly antisymmetric
        (2.0 * idx as f64 - (len - 1) as f64) / (len - 1) as f64
    }
}

/// Two-channel map of pixel coordinates in `[-1, 1]`: channel 0 is x
/// (column), channel 1 is y (row).
pub fn coord_channels(height: usize, width: usize) -> Result<FeatureMap> {
    FeatureMap::from_fn(height, width, 2, |y, x, c| {
        if c == 0 {
            normalized(x, width)
        } else {
            normalized(y, height)
        }
    })
}

/// Per-pixel dot product of the feature vector with a predicted 1×1 kernel.
pub fn dynamic_conv_1x1(feature: &FeatureMap, kernel: &[f64]) -> Result<MaskLogits> {
    let e = feature.channels();
    if kernel.len() != e {
        return Err(Error::dims(format!("kernel of {e}"), format!("kernel of {}", kernel.len())));
    }
    let values = feature
        .data()
        .chunks_exact(e)
        .map(|px| px.iter().zip(kernel).map(|(a, b)| a * b).sum())
        .collect();
    Ok(MaskLogits { height: feature.height(), width: feature.width(), values })
}

/// Same-size 3×3 cross-correlation with zero padding and no bias. The kernel
/// is flattened as `[channel][ky][kx]`.
pub fn dynamic_conv_3x3(feature: &FeatureMap, kernel: &[f64]) -> Result<MaskLogits> {
    let e = feature.channels();
    if kernel.len() != 9 * e {
        return Err(Error::dims(format!("kernel of {}", 9 * e), format!("kernel of {}", kernel.len())));
    }
    // tap-major copy so each tap is a contiguous channel vector
    let mut taps = vec![0.0; 9 * e];
    for c in 0..e {
        for t in 0..9 {
            taps[t * e + c] = kernel[c * 9 + t];
        }
    }
    let (h, w) = (feature.height(), feature.width());
    let mut values = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = x as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let px = feature.pixel(sy as usize, sx as usize);
                    let tap = &taps[(ky * 3 + kx) * e..(ky * 3 + kx + 1) * e];
                    for (a, b) in px.iter().zip(tap) {
                        acc += a * b;
                    }
                }
            }
            values[y * w + x] = acc;
        }
    }
    Ok(MaskLogits { height: h, width: w, values })
}

/// A fixed-weight 2D convolution (1×1 or 3×3, stride 1, same padding).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    /// `[out][in][ky][kx]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let conv = Self { in_channels, out_channels, kernel_size, weight, bias };
        conv.validate()?;
        Ok(conv)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size != 1 && self.kernel_size != 3 {
            return Err(Error::InvalidParameter(format!("kernel size {} not in {{1, 3}}", self.kernel_size)));
        }
        let expected = self.out_channels * self.in_channels * self.kernel_size * self.kernel_size;
        if self.weight.len() != expected || self.bias.len() != self.out_channels {
            return Err(Error::dims(
                format!("{expected} weights and {} biases", self.out_channels),
                format!("{} weights and {} biases", self.weight.len(), self.bias.len()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        if input.channels() != self.in_channels {
            return Err(Error::dims(
                format!("{} input channels", self.in_channels),
                format!("{} input channels", input.channels()),
            ));
        }
        let (h, w) = (input.height(), input.width());
        let (cin, cout, ks) = (self.in_channels, self.out_channels, self.kernel_size);
        let pad = (ks / 2) as isize;
        // [ky][kx][in][out] so the innermost loop walks outputs contiguously
        let taps = ks * ks;
        let mut wt = vec![0.0; taps * cin * cout];
        for o in 0..cout {
            for i in 0..cin {
                for t in 0..taps {
                    wt[(t * cin + i) * cout + o] = self.weight[(o * cin + i) * taps + t];
                }
            }
        }
        let mut out = Vec::with_capacity(h * w * cout);
        let mut acc = vec![0.0; cout];
        for y in 0..h {
            for x in 0..w {
                acc.copy_from_slice(&self.bias);
                for ky in 0..ks {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..ks {
                        let sx = x as isize + kx as isize - pad;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let px = input.pixel(sy as usize, sx as usize);
                        let t = ky * ks + kx;
                        for (i, &v) in px.iter().enumerate() {
                            let row = &wt[(t * cin + i) * cout..(t * cin + i + 1) * cout];
                            for (a, &k) in acc.iter_mut().zip(row) {
                                *a += v * k;
                            }
                        }
                    }
                }
                out.extend_from_slice(&acc);
            }
        }
        FeatureMap::new(h, w, cout, out)
    }
}

/// Group normalization parameters with per-channel affine scale and shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupNorm {
    pub groups: usize,
    pub epsilon: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl GroupNorm {
    /// Unit scale, zero shift, `min(32, channels)` groups.
    pub fn identity(channels: usize) -> Self {
        Self {
            groups: default_groups(channels),
            epsilon: DEFAULT_GN_EPSILON,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
        }
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        group_norm(input, self.groups, self.epsilon, &self.gamma, &self.beta)
    }
}

pub fn default_groups(channels: usize) -> usize {
    channels.min(32)
}

/// Normalizes each group of `channels / groups` channels to zero mean and
/// unit variance over all pixels of the group, then applies `gamma` / `beta`.
pub fn group_norm(input: &FeatureMap, groups: usize, epsilon: f64, gamma: &[f64], beta: &[f64]) -> Result<FeatureMap> {
    let c = input.channels();
    if groups == 0 || !c.is_multiple_of(groups) {
        return Err(Error::InvalidParameter(format!("{c} channels not divisible into {groups} groups")));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::dims(format!("{c} affine parameters"), format!("{}/{}", gamma.len(), beta.len())));
    }
    let per = c / groups;
    let count = (input.height() * input.width() * per) as f64;
    let mut mean = vec![0.0; groups];
    for px in input.data().chunks_exact(c) {
        for (g, m) in mean.iter_mut().enumerate() {
            *m += px[g * per..(g + 1) * per].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; groups];
    for px in input.data().chunks_exact(c) {
        for (g, v) in var.iter_mut().enumerate() {
            *v += px[g * per..(g + 1) * per].iter().map(|x| (x - mean[g]).powi(2)).sum::<f64>();
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / count + epsilon).sqrt()).collect();
    let data = input
        .data()
        .chunks_exact(c)
        .flat_map(|px| {
            px.iter().enumerate().map(|(ch, &x)| {
                let g = ch / per;
                (x - mean[g]) * inv_std[g] * gamma[ch] + beta[ch]
            })
        })
        .collect();
    FeatureMap::new(input.height(), input.width(), c, data)
}

pub fn relu(input: &FeatureMap) -> FeatureMap {
    input.map(|v| v.max(0.0))
}

// Source taps and weight for one output coordinate of a 2× upsample with
// half-pixel centers.
fn upsample_taps(out: usize, len: usize) -> (usize, usize, f64) {
    let src = ((out as f64 + 0.5) / 2.0 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, src - i0 as f64)
}

/// Doubles both spatial dimensions with bilinear interpolation, half-pixel
/// centers (align_corners = false), edges clamped.
pub fn bilinear_upsample_2x(input: &FeatureMap) -> FeatureMap {
    let (h, w, c) = (input.height(), input.width(), input.channels());
    let (oh, ow) = (2 * h, 2 * w);
    let cols: Vec<_> = (0..ow).map(|x| upsample_taps(x, w)).collect();
    let mut data = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        let (y0, y1, ly) = upsample_taps(oy, h);
        for &(x0, x1, lx) in &cols {
            let (p00, p01) = (input.pixel(y0, x0), input.pixel(y0, x1));
            let (p10, p11) = (input.pixel(y1, x0), input.pixel(y1, x1));
            for ch in 0..c {
                let top = p00[ch] + (p01[ch] - p00[ch]) * lx;
                let bottom = p10[ch] + (p11[ch] - p10[ch]) * lx;
                data.push(top + (bottom - top) * ly);
            }
        }
    }
    FeatureMap::new(oh, ow, c, data).expect("interpolation of finite values")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureMap {
        FeatureMap::from_fn(h, w, c, |_, _, _| rng.random_range(-2.0..2.0)).unwrap()
    }

    #[test]
    fn grid_index_examples() {
        assert_eq!(grid_index(2, 3, 5).unwrap(), 13);
        assert_eq!(grid_index(0, 0, 7).unwrap(), 0);
        assert_eq!(grid_index(6, 6, 7).unwrap(), 48);
        assert!(grid_index(7, 0, 7).is_err());
        assert!(grid_index(0, 7, 7).is_err());
    }

    #[test]
    fn coord_examples() {
        let m = coord_channels(2, 3).unwrap();
        let xs: Vec<f64> = (0..3).map(|x| m.get(0, x, 0)).collect();
        assert_eq!(xs, vec![-1.0, 0.0, 1.0]);
        let ys: Vec<f64> = (0..2).map(|y| m.get(y, 0, 1)).collect();
        assert_eq!(ys, vec![-1.0, 1.0]);
        let one = coord_channels(1, 1).unwrap();
        assert_eq!(one.data(), &[0.0, 0.0]);
    }

    #[test]
    fn coord_antisymmetry() {
        for (h, w) in [(1, 1), (4, 7), (5, 2)] {
            let m = coord_channels(h, w).unwrap();
            for y in 0..h {
                for x in 0..w {
                    assert_eq!(m.get(y, x, 0), -m.get(y, w - 1 - x, 0));
                    assert_eq!(m.get(y, x, 1), -m.get(h - 1 - y, x, 1));
                }
            }
        }
    }

    #[test]
    fn conv1x1_examples() {
        let f = FeatureMap::new(1, 1, 2, vec![1.0, 2.0]).unwrap();
        assert_eq!(dynamic_conv_1x1(&f, &[0.5, -1.0]).unwrap().values, vec![-1.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_map(&mut rng, 4, 4, 3);
        assert!(dynamic_conv_1x1(&f, &[0.0; 3]).unwrap().values.iter().all(|&v| v == 0.0));
        assert!(dynamic_conv_1x1(&f, &[0.0; 2]).is_err());
    }

    #[test]
    fn conv3x3_examples() {
        let mut impulse = vec![0.0; 9];
        impulse[4] = 1.0;
        let f = FeatureMap::new(3, 3, 1, impulse.clone()).unwrap();
        assert_eq!(dynamic_conv_3x3(&f, &impulse).unwrap().values, impulse);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_map(&mut rng, 5, 5, 2);
        let mut centre = vec![0.0; 18];
        centre[4] = 1.0;
        centre[13] = 1.0;
        let out = dynamic_conv_3x3(&f, &centre).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(out.get(y, x), f.get(y, x, 0) + f.get(y, x, 1));
            }
        }
        assert!(dynamic_conv_3x3(&f, &[0.0; 18]).unwrap().values.iter().all(|&v| v == 0.0));
        assert!(dynamic_conv_3x3(&f, &[0.0; 9]).is_err());
    }

    #[test]
    fn upsample_examples() {
        let f = FeatureMap::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(bilinear_upsample_2x(&f).data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);

        let c = FeatureMap::from_fn(3, 2, 2, |_, _, _| 4.5).unwrap();
        let up = bilinear_upsample_2x(&c);
        assert_eq!((up.height(), up.width(), up.channels()), (6, 4, 2));
        assert!(up.data().iter().all(|&v| v == 4.5));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_map(&mut rng, 3, 4, 2);
        let a = bilinear_upsample_2x(&f.map(|v| 2.5 * v));
        let b = bilinear_upsample_2x(&f).map(|v| 2.5 * v);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn group_norm_examples() {
        let c = FeatureMap::from_fn(3, 3, 4, |_, _, _| 7.0).unwrap();
        let out = group_norm(&c, 2, DEFAULT_GN_EPSILON, &[1.0; 4], &[0.0; 4]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        // already standardized: each group holds values {-1, +1}
        let f = FeatureMap::from_fn(2, 2, 2, |y, x, _| if (y + x) % 2 == 0 { 1.0 } else { -1.0 }).unwrap();
        let out = group_norm(&f, 1, DEFAULT_GN_EPSILON, &[1.0; 2], &[0.0; 2]).unwrap();
        for (a, b) in out.data().iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-5);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_map(&mut rng, 6, 5, 8);
        let out = group_norm(&f, 4, DEFAULT_GN_EPSILON, &[1.0; 8], &[0.0; 8]).unwrap();
        for g in 0..4 {
            let vals: Vec<f64> = out.data().chunks(8).flat_map(|px| px[g * 2..g * 2 + 2].to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
        assert!(group_norm(&f, 3, DEFAULT_GN_EPSILON, &[1.0; 8], &[0.0; 8]).is_err());
    }

    #[test]
    fn conv2d_identity_1x1() {
        let conv = Conv2d::new(2, 2, 1, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_map(&mut rng, 3, 3, 2);
        assert_eq!(conv.forward(&f).unwrap(), f);
        assert!(Conv2d::new(2, 2, 2, vec![0.0; 16], vec![0.0; 2]).is_err());
    }
}

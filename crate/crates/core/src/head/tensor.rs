use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Dense `height × width × channels` feature map, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidParameter(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::dims(
                format!("{} values", height * width * channels),
                format!("{} values", data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain { value: *v, domain: "finite feature values" });
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Channel vector of one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Appends the channels of `other` after this map's channels.
    pub fn concat_channels(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::dims(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        let channels = self.channels + other.channels;
        let mut data = Vec::with_capacity(self.height * self.width * channels);
        for (a, b) in self.data.chunks(self.channels).zip(other.data.chunks(other.channels)) {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        Ok(FeatureMap { height: self.height, width: self.width, channels, data })
    }

    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if (self.height, self.width, self.channels) != (other.height, other.width, other.channels) {
            return Err(Error::dims(self.shape_string(), other.shape_string()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(FeatureMap { data, ..*self })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        FeatureMap {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Which dynamic convolution a kernel grid encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `D = E`
    Conv1x1,
    /// `D = 9E`, flattened as `[channel][ky][kx]`
    Conv3x3,
}

/// Per-grid-cell predicted convolution weights, `S × S × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrid {
    grid_size: usize,
    kernel_dim: usize,
    feature_channels: usize,
    data: Vec<f64>,
}

impl KernelGrid {
    /// `kernel_dim` must equal `feature_channels` (1×1 kernels) or
    /// `9 * feature_channels` (3×3 kernels).
    pub fn new(grid_size: usize, kernel_dim: usize, feature_channels: usize, data: Vec<f64>) -> Result<Self> {
        if grid_size == 0 || feature_channels == 0 {
            return Err(Error::InvalidParameter("kernel grid dimensions must be positive".into()));
        }
        if kernel_dim != feature_channels && kernel_dim != 9 * feature_channels {
            return Err(Error::InvalidParameter(format!(
                "kernel dimension {kernel_dim} must be {feature_channels} or {}",
                9 * feature_channels
            )));
        }
        if data.len() != grid_size * grid_size * kernel_dim {
            return Err(Error::dims(
                format!("{} values", grid_size * grid_size * kernel_dim),
                format!("{} values", data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain { value: *v, domain: "finite kernel values" });
        }
        Ok(Self { grid_size, kernel_dim, feature_channels, data })
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn kernel_dim(&self) -> usize {
        self.kernel_dim
    }

    pub fn feature_channels(&self) -> usize {
        self.feature_channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn kind(&self) -> KernelKind {
        if self.kernel_dim == self.feature_channels {
            KernelKind::Conv1x1
        } else {
            KernelKind::Conv3x3
        }
    }

    /// Kernel of flattened cell `k = i * S + j`.
    pub fn kernel(&self, k: usize) -> &[f64] {
        &self.data[k * self.kernel_dim..(k + 1) * self.kernel_dim]
    }
}

/// Per-grid-cell class scores, `S × S × C`, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryGrid {
    grid_size: usize,
    num_classes: usize,
    data: Vec<f64>,
}

impl CategoryGrid {
    pub fn new(grid_size: usize, num_classes: usize, data: Vec<f64>) -> Result<Self> {
        if grid_size == 0 || num_classes == 0 {
            return Err(Error::InvalidParameter("category grid dimensions must be positive".into()));
        }
        if data.len() != grid_size * grid_size * num_classes {
            return Err(Error::dims(
                format!("{} values", grid_size * grid_size * num_classes),
                format!("{} values", data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain { value: *v, domain: "category score in [0, 1]" });
        }
        Ok(Self { grid_size, num_classes, data })
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Class scores of flattened cell `k`.
    pub fn scores(&self, k: usize) -> &[f64] {
        &self.data[k * self.num_classes..(k + 1) * self.num_classes]
    }
}

/// Raw (pre-sigmoid) single-channel mask output.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskLogits {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl MaskLogits {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn sigmoid(&self) -> SoftMask {
        SoftMask {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| sigmoid(v)).collect(),
        }
    }
}

// Largest f64 below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, kept strictly inside (0, 1) even where it saturates.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    (1.0 / (1.0 + (-x).exp())).clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

/// Per-pixel foreground probabilities in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SoftMask {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter("soft mask dimensions must be positive".into()));
        }
        if values.len() != height * width {
            return Err(Error::dims(format!("{} values", height * width), format!("{} values", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::Domain { value: *v, domain: "soft mask value in (0, 1)" });
        }
        Ok(Self { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Foreground where `value >= threshold`; a value of exactly 0.5 is
    /// foreground at the default threshold.
    pub fn binarize(&self, threshold: f64) -> BinaryMask {
        let bits: Vec<u8> = self.values.iter().map(|&v| (v >= threshold) as u8).collect();
        BinaryMask::from_bits(self.height, self.width, &bits).expect("dimensions already validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_dimension_law() {
        assert!(KernelGrid::new(2, 3, 3, vec![0.0; 12]).is_ok());
        assert!(KernelGrid::new(2, 27, 3, vec![0.0; 108]).is_ok());
        assert!(KernelGrid::new(2, 6, 3, vec![0.0; 24]).is_err());
        assert!(KernelGrid::new(2, 3, 3, vec![0.0; 11]).is_err());
        assert_eq!(KernelGrid::new(1, 18, 2, vec![0.0; 18]).unwrap().kind(), KernelKind::Conv3x3);
    }

    #[test]
    fn sigmoid_range_and_tie() {
        assert_eq!(sigmoid(0.0), 0.5);
        for x in [-1e6, -800.0, -40.0, 40.0, 800.0, 1e6] {
            let s = sigmoid(x);
            assert!(s > 0.0 && s < 1.0, "{x} -> {s}");
        }
        let logits = MaskLogits { height: 1, width: 3, values: vec![-1.0, 0.0, 1.0] };
        assert_eq!(logits.sigmoid().binarize(0.5).to_bits(), vec![0, 1, 1]);
    }

    #[test]
    fn validation() {
        assert!(FeatureMap::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(FeatureMap::new(0, 1, 1, vec![]).is_err());
        assert!(CategoryGrid::new(1, 1, vec![1.5]).is_err());
        assert!(SoftMask::new(1, 2, vec![0.0, 0.5]).is_err());
    }

    #[test]
    fn concat_interleaves_per_pixel() {
        let a = FeatureMap::from_fn(1, 2, 1, |_, x, _| x as f64).unwrap();
        let b = FeatureMap::from_fn(1, 2, 2, |_, x, c| 10.0 * x as f64 + c as f64).unwrap();
        let ab = a.concat_channels(&b).unwrap();
        assert_eq!(ab.data(), &[0.0, 0.0, 1.0, 1.0, 10.0, 11.0]);
    }
}

//! Binary masks, their run-length form, and overlap geometry.
//!
//! Masks are stored as packed row-major bitsets so that intersections reduce
//! to word-wise AND followed by popcount. Every IoU in the crate goes through
//! [`iou_from_counts`], which keeps the scalar and matrix paths bit-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

/// A binary instance mask of `height × width` pixels.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    // Row-major pixel p lives at bit p % 64 of word p / 64. Bits past
    // height * width are always zero.
    words: Vec<u64>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("area", &self.area())
            .finish()
    }
}

impl BinaryMask {
    /// All-background mask.
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        let n = height * width;
        Ok(Self {
            height,
            width,
            words: vec![0; n.div_ceil(WORD_BITS)],
        })
    }

    pub fn ones(height: usize, width: usize) -> Result<Self> {
        let mut m = Self::zeros(height, width)?;
        m.fill_range(0, height * width);
        Ok(m)
    }

    /// Builds a mask from row-major 0/1 values. Any non-zero byte is foreground.
    pub fn from_bits(height: usize, width: usize, bits: &[u8]) -> Result<Self> {
        let mut m = Self::zeros(height, width)?;
        if bits.len() != height * width {
            return Err(Error::dims(
                format!("{} bits", height * width),
                format!("{} bits", bits.len()),
            ));
        }
        for (p, &b) in bits.iter().enumerate() {
            if b != 0 {
                m.words[p / WORD_BITS] |= 1 << (p % WORD_BITS);
            }
        }
        Ok(m)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut m = Self::zeros(height, width)?;
        for y in 0..height {
            for x in 0..width {
                if f(y, x) {
                    m.set(y, x, true);
                }
            }
        }
        Ok(m)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        assert!(y < self.height && x < self.width, "pixel ({y}, {x}) out of bounds");
        let p = y * self.width + x;
        self.words[p / WORD_BITS] >> (p % WORD_BITS) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        assert!(y < self.height && x < self.width, "pixel ({y}, {x}) out of bounds");
        let p = y * self.width + x;
        let bit = 1u64 << (p % WORD_BITS);
        if value {
            self.words[p / WORD_BITS] |= bit;
        } else {
            self.words[p / WORD_BITS] &= !bit;
        }
    }

    /// Row-major 0/1 values.
    pub fn to_bits(&self) -> Vec<u8> {
        (0..self.len())
            .map(|p| (self.words[p / WORD_BITS] >> (p % WORD_BITS) & 1) as u8)
            .collect()
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Number of pixels set in both masks.
    pub fn intersection(&self, other: &BinaryMask) -> Result<u64> {
        self.check_same_dims(other)?;
        Ok(and_popcount(&self.words, &other.words))
    }

    fn check_same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::dims(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        Ok(())
    }

    // Sets pixels [start, end) in row-major order.
    fn fill_range(&mut self, start: usize, end: usize) {
        let mut p = start;
        while p < end {
            let word = p / WORD_BITS;
            let offset = p % WORD_BITS;
            let take = (WORD_BITS - offset).min(end - p);
            let bits = if take == WORD_BITS { u64::MAX } else { ((1u64 << take) - 1) << offset };
            self.words[word] |= bits;
            p += take;
        }
    }

    // Word range [first, last) holding every foreground bit; (0, 0) when empty.
    fn word_span(&self) -> (usize, usize) {
        match self.words.iter().position(|&w| w != 0) {
            None => (0, 0),
            Some(first) => {
                let last = self.words.iter().rposition(|&w| w != 0).unwrap_or(first);
                (first, last + 1)
            }
        }
    }
}

impl AsRef<BinaryMask> for BinaryMask {
    fn as_ref(&self) -> &BinaryMask {
        self
    }
}

#[inline]
fn and_popcount(a: &[u64], b: &[u64]) -> u64 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones() as u64).sum()
}

/// IoU from integer pixel counts. Two empty masks have IoU 0.
#[inline]
pub fn iou_from_counts(intersection: u64, area_a: u64, area_b: u64) -> f64 {
    let union = area_a + area_b - intersection;
    if union == 0 {
        0.0
    } else {
        intersection as f64 / union as f64
    }
}

/// Run-length form of a [`BinaryMask`].
///
/// Runs are row-major and alternate background/foreground, starting with a
/// background run that may be empty. Only the leading count may be zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u64>,
}

impl RleMask {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Malformed(format!(
                "rle dimensions must be positive, got {}x{}",
                self.height, self.width
            )));
        }
        let total: u64 = self.counts.iter().sum();
        let expected = (self.height * self.width) as u64;
        if total != expected {
            return Err(Error::Malformed(format!(
                "rle counts sum to {total}, expected {expected}"
            )));
        }
        if let Some(pos) = self.counts.iter().skip(1).position(|&c| c == 0) {
            return Err(Error::Malformed(format!("zero run length at position {}", pos + 1)));
        }
        Ok(())
    }
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for p in 0..mask.len() {
        let bit = mask.words[p / WORD_BITS] >> (p % WORD_BITS) & 1 == 1;
        if bit != current {
            counts.push(run);
            current = bit;
            run = 0;
        }
        run += 1;
    }
    counts.push(run);
    RleMask {
        height: mask.height,
        width: mask.width,
        counts,
    }
}

pub fn rle_decode(rle: &RleMask) -> Result<BinaryMask> {
    rle.validate()?;
    let mut mask = BinaryMask::zeros(rle.height, rle.width)?;
    let mut pos = 0usize;
    for (i, &c) in rle.counts.iter().enumerate() {
        let end = pos + c as usize;
        if i % 2 == 1 {
            mask.fill_range(pos, end);
        }
        pos = end;
    }
    Ok(mask)
}

pub fn mask_area(mask: &BinaryMask) -> u64 {
    mask.area()
}

pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection(b)?;
    Ok(iou_from_counts(inter, a.area(), b.area()))
}

/// Axis-aligned box with inclusive pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl PixelBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        if x_min > x_max || y_min > y_max {
            return Err(Error::InvalidParameter(format!(
                "box corners out of order: ({x_min}, {y_min}) .. ({x_max}, {y_max})"
            )));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }

    pub fn area(&self) -> u64 {
        (self.width() * self.height()) as u64
    }

    pub fn to_array(&self) -> [usize; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// Paints the box as a filled mask on a `height × width` canvas.
    pub fn to_mask(&self, height: usize, width: usize) -> Result<BinaryMask> {
        if self.x_max >= width || self.y_max >= height {
            return Err(Error::InvalidParameter(format!(
                "box {:?} exceeds {height}x{width} image",
                self.to_array()
            )));
        }
        let mut m = BinaryMask::zeros(height, width)?;
        for y in self.y_min..=self.y_max {
            let row = y * width;
            m.fill_range(row + self.x_min, row + self.x_max + 1);
        }
        Ok(m)
    }
}

/// Tightest box around the foreground.
pub fn mask_to_box(mask: &BinaryMask) -> Result<PixelBox> {
    let (first, last) = mask.word_span();
    if first == last {
        return Err(Error::EmptyMask);
    }
    let w = mask.width;
    let (mut x_min, mut y_min, mut x_max, mut y_max) = (usize::MAX, usize::MAX, 0, 0);
    for wi in first..last {
        let mut word = mask.words[wi];
        while word != 0 {
            let p = wi * WORD_BITS + word.trailing_zeros() as usize;
            let (y, x) = (p / w, p % w);
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
            word &= word - 1;
        }
    }
    Ok(PixelBox { x_min, y_min, x_max, y_max })
}

pub fn box_iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let ix0 = a.x_min.max(b.x_min);
    let iy0 = a.y_min.max(b.y_min);
    let ix1 = a.x_max.min(b.x_max);
    let iy1 = a.y_max.min(b.y_max);
    let inter = if ix0 > ix1 || iy0 > iy1 {
        0
    } else {
        ((ix1 - ix0 + 1) * (iy1 - iy0 + 1)) as u64
    };
    iou_from_counts(inter, a.area(), b.area())
}

/// Dense `n × n` pairwise IoU matrix, zero on and below the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct IoUMatrix {
    n: usize,
    values: Vec<f64>,
}

impl IoUMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, values: vec![0.0; n * n] }
    }

    /// Builds a matrix from `f(i, j)` evaluated for every `i < j`.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidParameter(format!("iou[{i}][{j}] = {v} not in [0, 1]")));
                }
                m.values[i * n + j] = v;
            }
        }
        Ok(m)
    }

    /// Wraps a row-major dense matrix, checking strict upper-triangularity and bounds.
    pub fn from_dense(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::dims(format!("{} entries", n * n), format!("{} entries", values.len())));
        }
        for i in 0..n {
            for j in 0..n {
                let v = values[i * n + j];
                if i >= j && v != 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "iou matrix not strictly upper triangular at ({i}, {j})"
                    )));
                }
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidParameter(format!("iou[{i}][{j}] = {v} not in [0, 1]")));
                }
            }
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Overlap of an unordered pair; reads the upper triangle.
    #[inline]
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        if i < j {
            self.get(i, j)
        } else {
            self.get(j, i)
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// IoU of every ordered pair `i < j`. Rows are filled in parallel when the
/// `parallel` feature is on; each entry is a pure function of its two masks so
/// the result does not depend on the thread count.
pub fn pairwise_iou_matrix<M: AsRef<BinaryMask> + Sync>(masks: &[M]) -> Result<IoUMatrix> {
    let masks: Vec<&BinaryMask> = masks.iter().map(AsRef::as_ref).collect();
    let n = masks.len();
    if let Some(first) = masks.first() {
        for m in &masks[1..] {
            first.check_same_dims(m)?;
        }
    }
    let areas: Vec<u64> = masks.iter().map(|m| m.area()).collect();
    let spans: Vec<(usize, usize)> = masks.iter().map(|m| m.word_span()).collect();

    let fill_row = |i: usize, row: &mut [f64]| {
        let (a0, a1) = spans[i];
        for j in i + 1..n {
            let (b0, b1) = spans[j];
            let (lo, hi) = (a0.max(b0), a1.min(b1));
            let inter = if lo < hi {
                and_popcount(&masks[i].words[lo..hi], &masks[j].words[lo..hi])
            } else {
                0
            };
            row[j] = iou_from_counts(inter, areas[i], areas[j]);
        }
    };

    let mut values = vec![0.0; n * n];
    if n > 0 {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            values
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| fill_row(i, row));
        }
        #[cfg(not(feature = "parallel"))]
        for (i, row) in values.chunks_mut(n).enumerate() {
            fill_row(i, row);
        }
    }
    Ok(IoUMatrix { n, values })
}

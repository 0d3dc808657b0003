//! File formats: mask-set JSON, suppression-result JSON and tensor files.
//!
//! Tensor files are one JSON header line, `{"shape": [...], "kind": "..."}`,
//! followed by the values as little-endian `f32`, row-major in the order the
//! shape lists.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{CategoryGrid, FeatureMap, Instance, KernelGrid};
use crate::mask::{mask_to_box, rle_decode, rle_encode, RleMask};
use crate::suppress::{ScoredMask, SuppressionResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub score: f64,
    pub category: u32,
    pub counts: Vec<u64>,
}

/// A set of same-sized scored masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    pub height: usize,
    pub width: usize,
    pub instances: Vec<InstanceRecord>,
}

impl MaskSet {
    pub fn from_masks(height: usize, width: usize, masks: &[ScoredMask]) -> Result<Self> {
        let instances = masks
            .iter()
            .map(|m| {
                if (m.mask().height(), m.mask().width()) != (height, width) {
                    return Err(Error::dims(
                        format!("{height}x{width}"),
                        format!("{}x{}", m.mask().height(), m.mask().width()),
                    ));
                }
                Ok(InstanceRecord {
                    score: m.score(),
                    category: m.category(),
                    counts: rle_encode(m.mask()).counts,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { height, width, instances })
    }

    pub fn to_masks(&self) -> Result<Vec<ScoredMask>> {
        self.instances
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let rle = RleMask { height: self.height, width: self.width, counts: rec.counts.clone() };
                let mask = rle_decode(&rle).map_err(|e| Error::Malformed(format!("instance {i}: {e}")))?;
                ScoredMask::new(mask, rec.score, rec.category)
                    .map_err(|e| Error::Malformed(format!("instance {i}: {e}")))
            })
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mask set serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeptRecord {
    pub index: usize,
    pub score: f64,
    pub category: u32,
    /// `[x_min, y_min, x_max, y_max]`, inclusive; null for an empty mask.
    #[serde(rename = "box")]
    pub bbox: Option<[usize; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDoc {
    pub kept: Vec<KeptRecord>,
}

impl ResultDoc {
    pub fn from_result(masks: &[ScoredMask], result: &SuppressionResult) -> Self {
        let kept = result
            .iter()
            .map(|(index, score)| KeptRecord {
                index,
                score,
                category: masks[index].category(),
                bbox: mask_to_box(masks[index].mask()).ok().map(|b| b.to_array()),
            })
            .collect();
        Self { kept }
    }

    pub fn from_instances(instances: &[Instance]) -> Self {
        let kept = instances
            .iter()
            .map(|inst| KeptRecord {
                index: inst.index,
                score: inst.score,
                category: inst.category,
                bbox: Some(inst.bbox.to_array()),
            })
            .collect();
        Self { kept }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("result serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Feature,
    Kernel,
    Category,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    shape: Vec<usize>,
    kind: TensorKind,
}

/// A raw 3-D tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn read(mut reader: impl BufRead) -> Result<Self> {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: TensorHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Malformed(format!("tensor header: {e}")))?;
        if header.shape.len() != 3 {
            return Err(Error::Malformed(format!("tensor shape must have 3 axes, got {:?}", header.shape)));
        }
        let count: usize = header.shape.iter().product();
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        if bytes.len() != count * 4 {
            return Err(Error::Malformed(format!(
                "tensor payload has {} bytes, shape {:?} needs {}",
                bytes.len(),
                header.shape,
                count * 4
            )));
        }
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Ok(Self { kind: header.kind, shape: header.shape, data })
    }

    pub fn write(&self, mut writer: impl Write) -> Result<()> {
        let header = TensorHeader { shape: self.shape.clone(), kind: self.kind };
        writeln!(writer, "{}", serde_json::to_string(&header)?)?;
        for v in &self.data {
            writer.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn expect_kind(&self, kind: TensorKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Malformed(format!("expected a {kind:?} tensor, got {:?}", self.kind)));
        }
        Ok(())
    }

    fn widened(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn from_feature(f: &FeatureMap) -> Self {
        Self {
            kind: TensorKind::Feature,
            shape: vec![f.height(), f.width(), f.channels()],
            data: f.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_kernels(k: &KernelGrid) -> Self {
        Self {
            kind: TensorKind::Kernel,
            shape: vec![k.grid_size(), k.grid_size(), k.kernel_dim()],
            data: k.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_category(c: &CategoryGrid) -> Self {
        Self {
            kind: TensorKind::Category,
            shape: vec![c.grid_size(), c.grid_size(), c.num_classes()],
            data: c.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn into_feature_map(self) -> Result<FeatureMap> {
        self.expect_kind(TensorKind::Feature)?;
        FeatureMap::new(self.shape[0], self.shape[1], self.shape[2], self.widened())
    }

    pub fn into_category_grid(self) -> Result<CategoryGrid> {
        self.expect_kind(TensorKind::Category)?;
        self.check_square()?;
        CategoryGrid::new(self.shape[0], self.shape[2], self.widened())
    }

    pub fn into_kernel_grid(self, feature_channels: usize) -> Result<KernelGrid> {
        self.expect_kind(TensorKind::Kernel)?;
        self.check_square()?;
        KernelGrid::new(self.shape[0], self.shape[2], feature_channels, self.widened())
    }

    fn check_square(&self) -> Result<()> {
        if self.shape[0] != self.shape[1] {
            return Err(Error::Malformed(format!("grid must be square, got {:?}", self.shape)));
        }
        Ok(())
    }
}

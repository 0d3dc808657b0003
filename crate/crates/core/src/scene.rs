//! Deterministic synthetic inputs: duplicate-cluster mask scenes for the
//! suppression methods, and seeded head inputs for the inference pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{CategoryGrid, FeatureMap, FusionWeights, KernelGrid, PyramidLevels};
use crate::mask::BinaryMask;
use crate::suppress::ScoredMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectangle" | "rect" => Ok(ShapeKind::Rectangle),
            "ellipse" => Ok(ShapeKind::Ellipse),
            other => Err(Error::InvalidParameter(format!("unknown shape `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub num_instances: usize,
    /// Extra jittered copies per instance; each instance yields `1 + this` masks.
    pub num_duplicates: usize,
    pub shape: ShapeKind,
    /// Standard deviation of the score jitter between copies.
    pub score_noise: f64,
    pub num_categories: u32,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            num_instances: 10,
            num_duplicates: 4,
            shape: ShapeKind::Ellipse,
            score_noise: 0.05,
            num_categories: 1,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidParameter("scene dimensions must be positive".into()));
        }
        if self.num_categories == 0 {
            return Err(Error::InvalidParameter("scene needs at least one category".into()));
        }
        if !(self.score_noise >= 0.0 && self.score_noise.is_finite()) {
            return Err(Error::Domain { value: self.score_noise, domain: "score noise >= 0" });
        }
        Ok(())
    }

    pub fn total_masks(&self) -> usize {
        self.num_instances * (1 + self.num_duplicates)
    }
}

fn paint(shape: ShapeKind, h: usize, w: usize, cy: f64, cx: f64, ry: f64, rx: f64) -> BinaryMask {
    let mut m = BinaryMask::zeros(h, w).expect("validated dimensions");
    let y0 = (cy - ry).floor().max(0.0) as usize;
    let y1 = ((cy + ry).ceil() as usize).min(h - 1);
    let x0 = (cx - rx).floor().max(0.0) as usize;
    let x1 = ((cx + rx).ceil() as usize).min(w - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
            let inside = match shape {
                ShapeKind::Rectangle => dy.abs() <= 1.0 && dx.abs() <= 1.0,
                ShapeKind::Ellipse => dy * dy + dx * dx <= 1.0,
            };
            if inside {
                m.set(y, x, true);
            }
        }
    }
    m
}

/// Paints `num_instances` base shapes, each followed by `num_duplicates`
/// copies with jittered position, size and score. Shapes are clipped to the
/// image; centres always fall inside it so no mask is empty.
pub fn gen_scene(spec: &SceneSpec) -> Result<Vec<ScoredMask>> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let clamp_y = |v: f64| v.clamp(0.0, (h - 1) as f64);
    let clamp_x = |v: f64| v.clamp(0.0, (w - 1) as f64);

    let mut out = Vec::with_capacity(spec.total_masks());
    for _ in 0..spec.num_instances {
        let ry = rng.random_range((h as f64 * 0.04).max(1.0)..=(h as f64 * 0.2).max(1.5));
        let rx = rng.random_range((w as f64 * 0.04).max(1.0)..=(w as f64 * 0.2).max(1.5));
        let cy = rng.random_range(0.0..h as f64).min((h - 1) as f64);
        let cx = rng.random_range(0.0..w as f64).min((w - 1) as f64);
        let base_score: f64 = rng.random_range(0.3..1.0);
        let category = rng.random_range(0..spec.num_categories);
        out.push(ScoredMask::new(paint(spec.shape, h, w, cy, cx, ry, rx), base_score, category)?);
        for _ in 0..spec.num_duplicates {
            let jy = clamp_y(cy + 0.1 * ry * unit.sample(&mut rng));
            let jx = clamp_x(cx + 0.1 * rx * unit.sample(&mut rng));
            let sy = (ry * (1.0 + 0.05 * unit.sample(&mut rng))).max(0.75);
            let sx = (rx * (1.0 + 0.05 * unit.sample(&mut rng))).max(0.75);
            let score = (base_score + spec.score_noise * unit.sample(&mut rng)).clamp(0.01, 1.0);
            out.push(ScoredMask::new(paint(spec.shape, h, w, jy, jx, sy, sx), score, category)?);
        }
    }
    Ok(out)
}

/// A random duplicate-cluster scene of exactly `n` masks on a small canvas.
/// Cluster sizes, shapes and canvas size all vary with the seed.
pub fn random_scene(seed: u64, n: usize) -> Result<Vec<ScoredMask>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let num_duplicates = rng.random_range(0..6usize);
    let side = rng.random_range(8..40usize);
    let spec = SceneSpec {
        height: side,
        width: rng.random_range(8..40usize),
        num_instances: n.div_ceil(num_duplicates + 1),
        num_duplicates,
        shape: if rng.random_bool(0.5) { ShapeKind::Ellipse } else { ShapeKind::Rectangle },
        score_noise: rng.random_range(0.0..0.15),
        num_categories: 1,
        seed: rng.random(),
    };
    let mut scene = gen_scene(&spec)?;
    scene.truncate(n);
    Ok(scene)
}

/// Shape of a seeded head input set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSceneSpec {
    /// Size of the finest pyramid level (the mask resolution).
    pub height: usize,
    pub width: usize,
    pub levels: usize,
    pub level_channels: usize,
    /// Mask feature channels `E`.
    pub feature_channels: usize,
    pub grid_size: usize,
    pub num_classes: usize,
    pub num_objects: usize,
    pub kernel_3x3: bool,
    pub seed: u64,
}

impl Default for PipelineSceneSpec {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            levels: 4,
            level_channels: 8,
            feature_channels: 8,
            grid_size: 12,
            num_classes: 3,
            num_objects: 4,
            kernel_3x3: false,
            seed: 0,
        }
    }
}

/// Head inputs: category grid, kernel grid and pyramid.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineScene {
    pub category: CategoryGrid,
    pub kernels: KernelGrid,
    pub pyramid: PyramidLevels,
}

impl PipelineScene {
    /// Random pyramid and fusion weights, plus `num_objects` objects that each
    /// own a small block of grid cells. Cells of one object share a kernel up
    /// to small noise, so they produce near-duplicate masks.
    pub fn seeded(spec: &PipelineSceneSpec) -> Result<Self> {
        if spec.num_classes == 0 || spec.grid_size == 0 {
            return Err(Error::InvalidParameter("grid size and class count must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let channels = vec![spec.level_channels; spec.levels];
        let weights = FusionWeights::seeded(rng.random(), &channels, spec.feature_channels)?;
        let levels = (0..spec.levels)
            .map(|l| {
                FeatureMap::from_fn(spec.height >> l, spec.width >> l, spec.level_channels, |_, _, _| {
                    unit.sample(&mut rng)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pyramid = PyramidLevels::new(levels, weights)?;

        let s = spec.grid_size;
        let e = spec.feature_channels;
        let d = if spec.kernel_3x3 { 9 * e } else { e };
        let mut cat: Vec<f64> = (0..s * s * spec.num_classes).map(|_| rng.random_range(0.0..0.08)).collect();
        let mut ker: Vec<f64> = (0..s * s * d).map(|_| 0.3 * unit.sample(&mut rng)).collect();
        for _ in 0..spec.num_objects {
            let base: Vec<f64> = (0..d).map(|_| unit.sample(&mut rng)).collect();
            let class = rng.random_range(0..spec.num_classes);
            let score: f64 = rng.random_range(0.4..0.95);
            let (ci, cj) = (rng.random_range(0..s), rng.random_range(0..s));
            for i in ci.saturating_sub(1)..(ci + 2).min(s) {
                for j in cj.saturating_sub(1)..(cj + 2).min(s) {
                    let k = i * s + j;
                    for (dst, b) in ker[k * d..(k + 1) * d].iter_mut().zip(&base) {
                        *dst = b + 0.05 * unit.sample(&mut rng);
                    }
                    let jitter: f64 = rng.random_range(-0.05..0.05);
                    cat[k * spec.num_classes + class] = (score + jitter).clamp(0.0, 1.0);
                }
            }
        }
        Ok(Self {
            category: CategoryGrid::new(s, spec.num_classes, cat)?,
            kernels: KernelGrid::new(s, d, e, ker)?,
            pyramid,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scene() {
        let spec = SceneSpec { num_instances: 0, ..Default::default() };
        assert!(gen_scene(&spec).unwrap().is_empty());
    }

    #[test]
    fn deterministic() {
        let spec = SceneSpec { seed: 7, num_categories: 3, ..Default::default() };
        assert_eq!(gen_scene(&spec).unwrap(), gen_scene(&spec).unwrap());
        let other = SceneSpec { seed: 8, ..spec.clone() };
        assert_ne!(gen_scene(&spec).unwrap(), gen_scene(&other).unwrap());
    }

    #[test]
    fn counts_and_non_empty() {
        for shape in [ShapeKind::Rectangle, ShapeKind::Ellipse] {
            let spec = SceneSpec { num_instances: 5, num_duplicates: 4, shape, height: 40, width: 60, seed: 3, ..Default::default() };
            let scene = gen_scene(&spec).unwrap();
            assert_eq!(scene.len(), 25);
            assert!(scene.iter().all(|m| !m.mask().is_empty()));
        }
        let tiny = SceneSpec { height: 1, width: 1, num_instances: 3, ..Default::default() };
        assert!(gen_scene(&tiny).unwrap().iter().all(|m| m.mask().area() == 1));
    }

    #[test]
    fn random_scene_sizes() {
        for n in [0, 1, 2, 7, 50] {
            assert_eq!(random_scene(n as u64, n).unwrap().len(), n);
        }
        assert_eq!(random_scene(3, 20).unwrap(), random_scene(3, 20).unwrap());
    }

    #[test]
    fn pipeline_scene_shapes() {
        let spec = PipelineSceneSpec { kernel_3x3: true, ..Default::default() };
        let scene = PipelineScene::seeded(&spec).unwrap();
        assert_eq!(scene.kernels.kernel_dim(), 72);
        assert_eq!(scene.pyramid.levels().len(), 4);
        assert_eq!(PipelineScene::seeded(&spec).unwrap(), scene);
    }
}

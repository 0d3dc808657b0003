//! Browser bindings for the demo page: scene generation, suppression with
//! live parameters, and a dynamic-convolution mask viewer.

use wasm_bindgen::prelude::*;

use dynseg_core::head::{coord_channels, dynamic_conv_1x1, FeatureMap};
use dynseg_core::io::ResultDoc;
use dynseg_core::scene::{gen_scene, SceneSpec, ShapeKind};
use dynseg_core::{suppress, DecayFn, Method, ScoredMask, SuppressionConfig};

const BACKGROUND: [u8; 3] = [18, 20, 28];

fn palette(i: usize) -> [u8; 3] {
    // golden-angle hue walk, fixed saturation and value
    let hue = (i as f64 * 137.507_764) % 360.0;
    let c = 0.85 * 0.75;
    let x = c * (1.0 - ((hue / 60.0) % 2.0 - 1.0).abs());
    let m = 0.85 - c;
    let (r, g, b) = match (hue / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [((r + m) * 255.0) as u8, ((g + m) * 255.0) as u8, ((b + m) * 255.0) as u8]
}

fn blank(height: usize, width: usize) -> Vec<u8> {
    let mut px = Vec::with_capacity(height * width * 4);
    for _ in 0..height * width {
        px.extend_from_slice(&[BACKGROUND[0], BACKGROUND[1], BACKGROUND[2], 255]);
    }
    px
}

fn blend(px: &mut [u8], color: [u8; 3], alpha: f64) {
    for (dst, src) in px.iter_mut().zip(color) {
        *dst = (f64::from(*dst) * (1.0 - alpha) + f64::from(src) * alpha).round() as u8;
    }
}

/// Paints `(mask, score, color)` layers lowest score first so the strongest
/// prediction ends up on top; opacity follows the score.
fn paint(height: usize, width: usize, layers: &[(&ScoredMask, f64, [u8; 3])]) -> Vec<u8> {
    let mut px = blank(height, width);
    let mut order: Vec<usize> = (0..layers.len()).collect();
    order.sort_by(|&a, &b| layers[a].1.total_cmp(&layers[b].1));
    for i in order {
        let (m, score, color) = layers[i];
        let alpha = 0.15 + 0.6 * score.clamp(0.0, 1.0);
        for y in 0..height {
            for x in 0..width {
                if m.mask().get(y, x) {
                    let o = (y * width + x) * 4;
                    blend(&mut px[o..o + 3], color, alpha);
                }
            }
        }
    }
    px
}

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// A generated scene plus the outcome of the last suppression run.
#[wasm_bindgen]
pub struct Demo {
    height: usize,
    width: usize,
    duplicates: usize,
    masks: Vec<ScoredMask>,
    kept: Vec<(usize, f64)>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(
        height: usize,
        width: usize,
        instances: usize,
        duplicates: usize,
        rectangles: bool,
        seed: u64,
    ) -> Result<Demo, JsValue> {
        let spec = SceneSpec {
            height,
            width,
            num_instances: instances,
            num_duplicates: duplicates,
            shape: if rectangles { ShapeKind::Rectangle } else { ShapeKind::Ellipse },
            seed,
            ..SceneSpec::default()
        };
        let masks = gen_scene(&spec).map_err(js_err)?;
        Ok(Demo { height, width, duplicates, masks, kept: Vec::new() })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// RGBA pixels of every generated mask.
    pub fn render_input(&self) -> Vec<u8> {
        let instance = |i: usize| i / self.cluster_size();
        let layers: Vec<_> = self.masks.iter().enumerate().map(|(i, m)| (m, m.score(), palette(instance(i)))).collect();
        paint(self.height, self.width, &layers)
    }

    /// Runs one method and returns the result JSON.
    pub fn run(
        &mut self,
        method: &str,
        linear: bool,
        sigma: f64,
        iou_threshold: f64,
        score_threshold: f64,
        top_k: usize,
    ) -> Result<String, JsValue> {
        let config = SuppressionConfig {
            method: method.parse::<Method>().map_err(js_err)?,
            decay: if linear { DecayFn::Linear } else { DecayFn::Gaussian { sigma } },
            iou_threshold,
            score_threshold,
            top_k,
            class_agnostic: true,
        };
        config.validate().map_err(js_err)?;
        let result = suppress(&self.masks, &config).map_err(js_err)?;
        self.kept = result.iter().collect();
        Ok(ResultDoc::from_result(&self.masks, &result).to_json())
    }

    /// RGBA pixels of the survivors of the last run, at their decayed scores.
    pub fn render_result(&self) -> Vec<u8> {
        let cluster = self.cluster_size();
        let layers: Vec<_> = self.kept.iter().map(|&(i, s)| (&self.masks[i], s, palette(i / cluster))).collect();
        paint(self.height, self.width, &layers)
    }

    // masks are generated instance by instance, each followed by its copies
    fn cluster_size(&self) -> usize {
        self.duplicates + 1
    }
}

/// Sigmoid mask of the 1×1 kernel `(kx, ky, bias)` applied to the feature
/// `[x, y, 1]`, as RGBA. Pixels at or above `threshold` are tinted; the rest
/// are shown in grey by probability.
#[wasm_bindgen]
pub fn coord_kernel_mask(size: usize, kx: f64, ky: f64, bias: f64, threshold: f64) -> Result<Vec<u8>, JsValue> {
    let feature = plane_feature(size).map_err(js_err)?;
    let soft = dynamic_conv_1x1(&feature, &[kx, ky, bias]).map_err(js_err)?.sigmoid();
    let mask = soft.binarize(threshold);
    let mut px = Vec::with_capacity(size * size * 4);
    for y in 0..size {
        for x in 0..size {
            let p = soft.values()[y * size + x];
            let g = (p * 200.0) as u8;
            let rgb = if mask.get(y, x) { [g / 3, g, (f64::from(g) * 0.8) as u8] } else { [g / 2, g / 2, g / 2] };
            px.extend_from_slice(&[rgb[0], rgb[1], rgb[2], 255]);
        }
    }
    Ok(px)
}

fn plane_feature(size: usize) -> dynseg_core::Result<FeatureMap> {
    coord_channels(size, size)?.concat_channels(&FeatureMap::from_fn(size, size, 1, |_, _, _| 1.0)?)
}

//! Training losses with hand-derived gradients: Dice for masks, Focal for
//! categories, and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::SoftMask;
use crate::mask::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the mask term.
    pub lambda: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub dice_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 3.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            dice_epsilon: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Domain { value: self.lambda, domain: "lambda >= 0" });
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) {
            return Err(Error::Domain { value: self.focal_alpha, domain: "alpha in [0, 1]" });
        }
        if self.focal_gamma.is_nan() || self.focal_gamma < 0.0 {
            return Err(Error::Domain { value: self.focal_gamma, domain: "gamma >= 0" });
        }
        if self.dice_epsilon.is_nan() || self.dice_epsilon <= 0.0 {
            return Err(Error::Domain { value: self.dice_epsilon, domain: "epsilon > 0" });
        }
        Ok(())
    }
}

/// Loss value with its gradient with respect to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<G> {
    pub value: f64,
    pub grad: G,
}

/// `1 - 2Σpq / (Σp² + Σq² + ε)` over flat slices of equal length.
pub fn dice_loss_values(pred: &[f64], target: &[f64], epsilon: f64) -> Result<LossGrad<Vec<f64>>> {
    if pred.len() != target.len() {
        return Err(Error::dims(format!("{} values", target.len()), format!("{} values", pred.len())));
    }
    let inter: f64 = pred.iter().zip(target).map(|(p, q)| p * q).sum();
    let denom = pred.iter().map(|p| p * p).sum::<f64>() + target.iter().map(|q| q * q).sum::<f64>() + epsilon;
    let value = 1.0 - 2.0 * inter / denom;
    // d/dp_k of -2a/b = -2 (q_k b - 2 a p_k) / b²
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, q)| -2.0 * (q * denom - 2.0 * inter * p) / (denom * denom))
        .collect();
    Ok(LossGrad { value, grad })
}

pub fn dice_loss(pred: &SoftMask, target: &BinaryMask, epsilon: f64) -> Result<LossGrad<Vec<f64>>> {
    if (pred.height(), pred.width()) != (target.height(), target.width()) {
        return Err(Error::dims(
            format!("{}x{}", target.height(), target.width()),
            format!("{}x{}", pred.height(), pred.width()),
        ));
    }
    let q: Vec<f64> = target.to_bits().into_iter().map(f64::from).collect();
    dice_loss_values(pred.values(), &q, epsilon)
}

/// `-α_t (1 - p_t)^γ ln p_t` for one prediction, with `d/dpred`.
pub fn focal_loss(pred: f64, target: bool, alpha: f64, gamma: f64) -> Result<LossGrad<f64>> {
    if !(pred > 0.0 && pred < 1.0) {
        return Err(Error::Domain { value: pred, domain: "probability in (0, 1)" });
    }
    let (pt, alpha_t, sign) = if target { (pred, alpha, 1.0) } else { (1.0 - pred, 1.0 - alpha, -1.0) };
    let miss = 1.0 - pt;
    let log_pt = pt.ln();
    let value = -alpha_t * miss.powf(gamma) * log_pt;
    let modulating_grad = if gamma == 0.0 { 0.0 } else { gamma * miss.powf(gamma - 1.0) * log_pt };
    let d_pt = alpha_t * (modulating_grad - miss.powf(gamma) / pt);
    Ok(LossGrad { value, grad: sign * d_pt })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Mean focal term plus `lambda` times the mean dice term. An empty list
/// contributes 0.
pub fn total_loss(cate_terms: &[f64], mask_terms: &[f64], config: &LossConfig) -> f64 {
    mean(cate_terms) + config.lambda * mean(mask_terms)
}

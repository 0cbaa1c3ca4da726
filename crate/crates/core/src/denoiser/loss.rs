//! Masked, timestep-weighted reconstruction loss.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sketch::encoding::{param_slice, row_kind, CLASS_BLOCK, FEATURE_DIM, FLAG_BLOCK};

use super::train::TrainConfig;

/// Floor on predicted probabilities inside the logarithm, diagnostics only
/// for fully saturated softmax outputs.
const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean squared error over the true class's parameter slice of each row.
    pub mse: f64,
    /// Cross-entropy against the smoothed targets, averaged over rows.
    pub ce: f64,
    /// Multiplier applied to `mse` at this timestep.
    pub mse_weight: f64,
}

/// Loss of a prediction against the smoothed clean matrix, with its gradient
/// with respect to the prediction.
pub fn loss(
    pred: ArrayView2<'_, f64>,
    x0: ArrayView2<'_, f64>,
    t: usize,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Array2<f64>)> {
    if pred.dim() != x0.dim() || pred.ncols() != FEATURE_DIM {
        return Err(Error::DimensionMismatch { expected: x0.len(), actual: pred.len() });
    }
    let rows = x0.nrows().max(1) as f64;
    let mut grad = Array2::zeros(pred.raw_dim());

    let masked: usize = x0.rows().into_iter().map(|r| row_kind(r).param_count()).sum();
    let count = masked.max(1) as f64;
    let mse_weight = if t <= cfg.mse_boost_threshold { cfg.lambda } else { 1.0 };
    let mut sq = 0.0;
    for (i, r0) in x0.rows().into_iter().enumerate() {
        if let Some(range) = param_slice(row_kind(r0)) {
            for j in range {
                let d = pred[[i, j]] - x0[[i, j]];
                sq += d * d;
                grad[[i, j]] = mse_weight * 2.0 * d / count;
            }
        }
    }
    let mse = sq / count;

    let mut ce = 0.0;
    for (i, r0) in x0.rows().into_iter().enumerate() {
        for block in [FLAG_BLOCK, CLASS_BLOCK] {
            for j in block {
                let p = pred[[i, j]].max(PROB_FLOOR);
                ce -= r0[j] * p.ln();
                grad[[i, j]] = -r0[j] / p / rows;
            }
        }
    }
    ce /= rows;

    let total = mse_weight * mse + ce;
    Ok((LossBreakdown { total, mse, ce, mse_weight }, grad))
}

/// Entropy of the smoothed targets, the minimum of the cross-entropy term.
pub fn target_entropy(x0: ArrayView2<'_, f64>) -> f64 {
    let rows = x0.nrows().max(1) as f64;
    -x0.slice(s![.., 0..CLASS_BLOCK.end]).iter().map(|p| p * p.ln()).sum::<f64>() / rows
}

//! Denoisers: the prediction contract, an oracle bound to a known clean
//! sketch, and a small trainable set-attention network.

pub mod checkpoint;
pub mod loss;
pub mod network;
pub mod train;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::sketch::encoding::{harden_blocks, FEATURE_DIM};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use loss::{loss, LossBreakdown};
pub use network::{DenoiserParams, NetworkConfig};
pub use train::{class_accuracy, train, TrainConfig, TrainOutcome};

/// Predicts the clean matrix `X_0` from a noisy one. Categorical blocks of
/// the prediction are probability vectors; parameter blocks are raw values.
pub trait Denoiser: Sync {
    fn predict(&self, xt: ArrayView2<'_, f64>, t: usize) -> Result<Array2<f64>>;
}

/// Ignores its input and returns the clean matrix it was built from, with
/// hard one-hot categorical blocks. Re-smoothing inside the reverse step then
/// reproduces the clean matrix's smoothed blocks exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDenoiser {
    x0: Array2<f64>,
}

impl OracleDenoiser {
    pub fn new(x0: ArrayView2<'_, f64>) -> Self {
        Self { x0: harden_blocks(x0) }
    }

    pub fn target(&self) -> &Array2<f64> {
        &self.x0
    }
}

impl Denoiser for OracleDenoiser {
    fn predict(&self, xt: ArrayView2<'_, f64>, _t: usize) -> Result<Array2<f64>> {
        if xt.dim() != self.x0.dim() {
            return Err(Error::DimensionMismatch { expected: self.x0.nrows() * FEATURE_DIM, actual: xt.len() });
        }
        Ok(self.x0.clone())
    }
}

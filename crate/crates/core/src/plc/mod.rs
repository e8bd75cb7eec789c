//! Contrastive objectives over memory banks and the loss-noise model.

pub mod bmm;
pub mod losses;

pub use bmm::{fit_bmm, fit_bmm_raw, normalize_losses, BetaComponent, BetaMixture, FitTrace, LOSS_EPS};
pub use losses::{
    cluster_nce_batch, cluster_nce_loss, per_sample_nce, plc_batch, plc_coefficients, plc_loss,
    similarity_logits,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlcMode {
    Static(f64),
    Dynamic,
}

/// Per-sample correction weights for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct PlcWeights {
    pub w: Vec<f64>,
    pub mode: PlcMode,
}

impl PlcWeights {
    pub fn constant(n: usize, w: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::config(format!("static PLC weight {w} outside [0, 1]")));
        }
        Ok(PlcWeights { w: vec![w; n], mode: PlcMode::Static(w) })
    }

    /// Posterior of the noisy component for each normalized loss.
    pub fn dynamic(bmm: &BetaMixture, normalized: &[f64]) -> Self {
        PlcWeights {
            w: normalized.iter().map(|&l| bmm.noise_posterior(l)).collect(),
            mode: PlcMode::Dynamic,
        }
    }
}

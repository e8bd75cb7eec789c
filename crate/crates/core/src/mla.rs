//! Modality-level alignment: cross-modality cluster alignment (CMA) and
//! labeling-function consistency (LFC).

use crate::diffcore::tensor::{self, DenseTensor};
use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::membank::MemoryBank;
use crate::plc::losses::{check_tau, cluster_nce_batch, similarity_logits};
use crate::sfm::MatchTable;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityDistribution {
    pub probs: Vec<f64>,
    pub tau: f64,
}

/// Softmax of `z · φ_k / τ` over the bank.
pub fn similarity_distribution(z: &[f64], bank: &MemoryBank, tau: f64) -> Result<SimilarityDistribution> {
    check_tau(tau)?;
    if z.len() != bank.dim() {
        return Err(Error::dim("feature width differs from bank"));
    }
    let logits: Vec<f64> = bank.centroids().iter().map(|c| tensor::dot(z, c) / tau).collect();
    Ok(SimilarityDistribution { probs: softmax(&logits), tau })
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Target-bank index for each source-cluster label under `map`.
pub fn matched_targets(labels: &[usize], map: &[usize]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&c| {
            map.get(c)
                .copied()
                .ok_or_else(|| Error::contract(format!("cluster {c} has no match; refresh the match table")))
        })
        .collect()
}

/// One CMA direction: cross-entropy of each row toward its matched centroid
/// in the other modality's bank, averaged.
pub fn cma_direction<'t>(z: Var<'t>, target_bank: Var<'t>, matched: &[usize], tau: f64) -> Result<Var<'t>> {
    cluster_nce_batch(z, target_bank, matched, tau)
}

/// Symmetric CMA loss for visible rows `zv` (labels into the visible bank)
/// and infrared rows `zi`.
#[allow(clippy::too_many_arguments)]
pub fn cma_loss(
    zv: &DenseTensor,
    v_labels: &[usize],
    zi: &DenseTensor,
    i_labels: &[usize],
    bank_v: &MemoryBank,
    bank_i: &MemoryBank,
    table: &MatchTable,
    tau: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let bv = tape.constant(bank_v.to_tensor());
    let bi = tape.constant(bank_i.to_tensor());
    let tv = matched_targets(v_labels, &table.v_to_i)?;
    let ti = matched_targets(i_labels, &table.i_to_v)?;
    let lv = cma_direction(tape.constant(zv.clone()), bi, &tv, tau)?;
    let li = cma_direction(tape.constant(zi.clone()), bv, &ti, tau)?;
    Ok(lv.add(li)?.item())
}

/// Symmetric cross-entropy between the real-bank and pseudo-bank
/// distributions of each row: `[B]`.
pub fn f_clu_rows<'t>(z: Var<'t>, real: Var<'t>, pseudo: Var<'t>, tau: f64) -> Result<Var<'t>> {
    if real.shape() != pseudo.shape() {
        return Err(Error::contract(format!(
            "real bank {:?} and pseudo bank {:?} differ",
            real.shape(),
            pseudo.shape()
        )));
    }
    let lr = similarity_logits(z, real, tau)?.log_softmax_rows();
    let lp = similarity_logits(z, pseudo, tau)?.log_softmax_rows();
    let pr = lr.exp();
    let pp = lp.exp();
    Ok(pr.mul(lp)?.add(pp.mul(lr)?)?.row_sum())
}

pub fn f_clu(z: &[f64], real: &MemoryBank, pseudo: &MemoryBank, tau: f64) -> Result<f64> {
    if real.len() != pseudo.len() {
        return Err(Error::contract(format!(
            "real bank has {} centroids, pseudo bank {}",
            real.len(),
            pseudo.len()
        )));
    }
    let tape = Tape::new();
    let zv = tape.constant(DenseTensor::matrix(1, z.len(), z.to_vec())?);
    let f = f_clu_rows(zv, tape.constant(real.to_tensor()), tape.constant(pseudo.to_tensor()), tau)?;
    Ok(f.item())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfcMode {
    /// `-(1/N) Σ log softmax_batch(F)_i`.
    BatchSoftmax,
    /// `-(1/N) Σ F_i`.
    Mean,
}

/// LFC term for one modality's batch.
pub fn lfc_modality<'t>(
    z: Var<'t>,
    real: Var<'t>,
    pseudo: Var<'t>,
    tau: f64,
    mode: LfcMode,
) -> Result<Var<'t>> {
    let f = f_clu_rows(z, real, pseudo, tau)?;
    if f.shape()[0] == 1 && mode == LfcMode::BatchSoftmax {
        log::warn!("LFC on a batch of one is identically zero");
    }
    Ok(match mode {
        LfcMode::BatchSoftmax => f.log_softmax_rows().mean().neg(),
        LfcMode::Mean => f.mean().neg(),
    })
}

/// Sum of the visible and infrared LFC terms. Pseudo banks must already be
/// indexed like the real bank of the same modality.
#[allow(clippy::too_many_arguments)]
pub fn lfc_loss(
    zv: &DenseTensor,
    zi: &DenseTensor,
    real_v: &MemoryBank,
    pseudo_v: &MemoryBank,
    real_i: &MemoryBank,
    pseudo_i: &MemoryBank,
    tau: f64,
    mode: LfcMode,
) -> Result<f64> {
    let tape = Tape::new();
    let c = |b: &MemoryBank| tape.constant(b.to_tensor());
    let lv = lfc_modality(tape.constant(zv.clone()), c(real_v), c(pseudo_v), tau, mode)?;
    let li = lfc_modality(tape.constant(zi.clone()), c(real_i), c(pseudo_i), tau, mode)?;
    Ok(lv.add(li)?.item())
}

/// Batch-softmax LFC value for given `F` values, without a tape.
pub fn lfc_from_f(f: &[f64]) -> f64 {
    let p = softmax(f);
    -p.iter().map(|v| v.ln()).sum::<f64>() / f.len() as f64
}

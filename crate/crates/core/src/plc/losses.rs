use crate::diffcore::tape::Var;
use crate::diffcore::tensor::{self, DenseTensor};
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::membank::MemoryBank;

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config(format!("temperature must be > 0, got {tau}")));
    }
    Ok(())
}

/// `z · φ_k / τ` for every row of `z` `[B, d]` against `bank` `[K, d]`.
pub fn similarity_logits<'t>(z: Var<'t>, bank: Var<'t>, tau: f64) -> Result<Var<'t>> {
    check_tau(tau)?;
    Ok(z.matmul_t(bank)?.scale(1.0 / tau))
}

fn check_ids(ids: &[usize], rows: usize, k: usize, what: &str) -> Result<()> {
    if ids.len() != rows {
        return Err(Error::contract(format!("{} {what} ids for {rows} rows", ids.len())));
    }
    if let Some(&bad) = ids.iter().find(|&&j| j >= k) {
        return Err(Error::contract(format!("{what} id {bad} out of range for {k} clusters")));
    }
    Ok(())
}

/// Mean ClusterNCE over the rows of `z`: `-log softmax(z φ / τ)[pos]`.
pub fn cluster_nce_batch<'t>(z: Var<'t>, bank: Var<'t>, pos: &[usize], tau: f64) -> Result<Var<'t>> {
    let logits = similarity_logits(z, bank, tau)?;
    let shape = logits.shape();
    check_ids(pos, shape[0], shape[1], "positive")?;
    Ok(logits.log_softmax_rows().gather_cols(pos.to_vec())?.mean().neg())
}

/// Pull/push coefficient rows for the PLC objective.
///
/// pull = (1-w)·e(φ₊) + w·e(c); push = pull + Σ_{k ∉ {+, c}} e(φ_k).
pub fn plc_coefficients(
    k: usize,
    pos: &[usize],
    nearest: &[usize],
    w: &[f64],
) -> Result<(DenseTensor, DenseTensor)> {
    let b = pos.len();
    check_ids(pos, b, k, "positive")?;
    check_ids(nearest, b, k, "nearest")?;
    if w.len() != b {
        return Err(Error::contract(format!("{} weights for {b} rows", w.len())));
    }
    let mut pull = vec![0.0; b * k];
    let mut push = vec![1.0; b * k];
    for i in 0..b {
        let wi = w[i];
        if !(0.0..=1.0).contains(&wi) {
            return Err(Error::contract(format!("weight {wi} outside [0, 1]")));
        }
        let row = &mut pull[i * k..(i + 1) * k];
        if pos[i] == nearest[i] {
            row[pos[i]] = 1.0;
        } else {
            row[pos[i]] = 1.0 - wi;
            row[nearest[i]] = wi;
        }
        let prow = &mut push[i * k..(i + 1) * k];
        prow[pos[i]] = row[pos[i]];
        prow[nearest[i]] = row[nearest[i]];
    }
    Ok((
        DenseTensor::matrix(b, k, pull)?,
        DenseTensor::matrix(b, k, push)?,
    ))
}

/// Mean PLC loss `-log(pull / push)` over the rows of `z`.
pub fn plc_batch<'t>(
    z: Var<'t>,
    bank: Var<'t>,
    pos: &[usize],
    nearest: &[usize],
    w: &[f64],
    tau: f64,
) -> Result<Var<'t>> {
    let logits = similarity_logits(z, bank, tau)?;
    let shape = logits.shape();
    let (pull, push) = plc_coefficients(shape[1], pos, nearest, w)?;
    let log_push = logits.masked_log_sum_exp_rows(push)?;
    let log_pull = logits.masked_log_sum_exp_rows(pull)?;
    Ok(log_push.sub(log_pull)?.mean())
}

fn single<'t>(tape: &'t Tape, z: &[f64], bank: &MemoryBank) -> Result<(Var<'t>, Var<'t>)> {
    if z.len() != bank.dim() {
        return Err(Error::dim("feature width differs from bank"));
    }
    let zv = tape.constant(DenseTensor::matrix(1, z.len(), z.to_vec())?);
    let bv = tape.constant(bank.to_tensor());
    Ok((zv, bv))
}

/// ClusterNCE for one feature.
pub fn cluster_nce_loss(z: &[f64], bank: &MemoryBank, pos: usize, tau: f64) -> Result<f64> {
    let tape = Tape::new();
    let (zv, bv) = single(&tape, z, bank)?;
    Ok(cluster_nce_batch(zv, bv, &[pos], tau)?.item())
}

/// PLC loss for one feature.
pub fn plc_loss(
    z: &[f64],
    bank: &MemoryBank,
    pos: usize,
    nearest: usize,
    w: f64,
    tau: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let (zv, bv) = single(&tape, z, bank)?;
    Ok(plc_batch(zv, bv, &[pos], &[nearest], &[w], tau)?.item())
}

/// Per-row ClusterNCE values without recording a tape.
pub fn per_sample_nce(z: &DenseTensor, bank: &DenseTensor, pos: &[usize], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    check_ids(pos, z.rows(), bank.rows(), "positive")?;
    let sims = tensor::matmul_t(z, bank)?;
    let k = bank.rows();
    Ok((0..z.rows())
        .map(|i| {
            let row = &sims.data()[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / tau;
            let lse = m + row.iter().map(|s| (s / tau - m).exp()).sum::<f64>().ln();
            lse - row[pos[i]] / tau
        })
        .collect())
}

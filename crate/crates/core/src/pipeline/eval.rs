//! Cross-modality retrieval metrics.

use std::io::Write;

use crate::datagen::{EmbeddingDataset, Modality};
use crate::diffcore::tensor::{self, DenseTensor};
use crate::diffcore::Network;
use crate::error::{Error, Result};

pub const RANKS: [usize; 4] = [1, 5, 10, 20];

/// Metrics for one query → gallery direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionMetrics {
    /// CMC at [`RANKS`].
    pub cmc: [f64; 4],
    pub map: f64,
    pub minp: f64,
    pub queries: usize,
    /// Queries without any positive in the gallery.
    pub excluded: usize,
}

/// Ranking statistics of one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryScore {
    /// 1-based rank of the first positive.
    pub first_hit: usize,
    pub ap: f64,
    pub inp: f64,
}

/// Score one query from its similarity row. Higher similarity ranks first;
/// equal similarities keep gallery order. `None` when no positive exists.
pub fn score_query(sims: &[f64], positive: &[bool]) -> Option<QueryScore> {
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut ap = 0.0;
    let mut first = 0;
    let mut last = 0;
    for (r, &g) in order.iter().enumerate() {
        if positive[g] {
            hits += 1;
            ap += hits as f64 / (r + 1) as f64;
            if first == 0 {
                first = r + 1;
            }
            last = r + 1;
        }
    }
    if hits == 0 {
        return None;
    }
    let ap = ap / hits as f64;
    Some(QueryScore { first_hit: first, ap, inp: hits as f64 / last as f64 })
}

/// Rank every gallery row for every query row by cosine similarity.
pub fn evaluate_features(
    query: &DenseTensor,
    query_ids: &[usize],
    gallery: &DenseTensor,
    gallery_ids: &[usize],
) -> Result<DirectionMetrics> {
    if query.rows() != query_ids.len() || gallery.rows() != gallery_ids.len() {
        return Err(Error::contract("identity lists do not match feature rows"));
    }
    let (q, _) = tensor::normalize_rows(query)?;
    let (g, _) = tensor::normalize_rows(gallery)?;
    let sims = tensor::matmul_t(&q, &g)?;
    let mut cmc = [0.0; 4];
    let (mut map, mut minp) = (0.0, 0.0);
    let mut scored = 0usize;
    let mut excluded = 0usize;
    for (i, &qid) in query_ids.iter().enumerate() {
        let positive: Vec<bool> = gallery_ids.iter().map(|&g| g == qid).collect();
        match score_query(sims.row(i), &positive) {
            None => excluded += 1,
            Some(s) => {
                scored += 1;
                for (c, &k) in cmc.iter_mut().zip(&RANKS) {
                    if s.first_hit <= k {
                        *c += 1.0;
                    }
                }
                map += s.ap;
                minp += s.inp;
            }
        }
    }
    if excluded > 0 {
        log::warn!("{excluded} queries have no positive in the gallery and were excluded");
    }
    let n = scored.max(1) as f64;
    Ok(DirectionMetrics {
        cmc: cmc.map(|c| c / n),
        map: map / n,
        minp: minp / n,
        queries: scored,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub v2i: DirectionMetrics,
    pub i2v: DirectionMetrics,
}

impl MetricsReport {
    /// Mean mAP over both directions.
    pub fn map(&self) -> f64 {
        0.5 * (self.v2i.map + self.i2v.map)
    }

    pub fn rank1(&self) -> f64 {
        0.5 * (self.v2i.cmc[0] + self.i2v.cmc[0])
    }

    pub fn minp(&self) -> f64 {
        0.5 * (self.v2i.minp + self.i2v.minp)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "direction,rank1,rank5,rank10,rank20,map,minp")?;
        for (dir, m) in [("V2I", &self.v2i), ("I2V", &self.i2v)] {
            writeln!(
                w,
                "{dir},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                m.cmc[0], m.cmc[1], m.cmc[2], m.cmc[3], m.map, m.minp
            )?;
        }
        Ok(())
    }
}

/// Encode rows with `encoder` and L2-normalize.
pub fn encode(encoder: &Network, x: &DenseTensor) -> Result<DenseTensor> {
    Ok(tensor::normalize_rows(&encoder.infer(x)?)?.0)
}

/// Visible originals against infrared originals and back.
pub fn evaluate(encoder: &Network, data: &EmbeddingDataset) -> Result<MetricsReport> {
    let v = data.originals(Modality::Visible);
    let i = data.originals(Modality::Infrared);
    if v.is_empty() || i.is_empty() {
        return Err(Error::Data("evaluation needs samples from both modalities".into()));
    }
    let ids = |idx: &[usize]| idx.iter().map(|&k| data.samples()[k].identity).collect::<Vec<_>>();
    let fv = encode(encoder, &data.feature_matrix(&v))?;
    let fi = encode(encoder, &data.feature_matrix(&i))?;
    let (vid, iid) = (ids(&v), ids(&i));
    Ok(MetricsReport {
        v2i: evaluate_features(&fv, &vid, &fi, &iid)?,
        i2v: evaluate_features(&fi, &iid, &fv, &vid)?,
    })
}

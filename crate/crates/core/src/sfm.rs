//! Cluster correspondence between modalities: sequential filtering matching
//! and a greedy baseline.

use std::io::Write;

use crate::bit::translate_batch;
use crate::cluster::PseudoLabeling;
use crate::diffcore::tensor::dot;
use crate::diffcore::Network;
use crate::error::{Error, Result};
use crate::membank::MemoryBank;

/// Support for one source cluster's chosen target.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchEvidence {
    pub votes: usize,
    pub runner_votes: usize,
    pub cosine: f64,
    /// Votes received by every target centroid.
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchTable {
    pub v_to_i: Vec<usize>,
    pub i_to_v: Vec<usize>,
    pub v_evidence: Vec<MatchEvidence>,
    pub i_evidence: Vec<MatchEvidence>,
}

impl MatchTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "direction,src,dst,votes,runner_votes,cosine")?;
        for (dir, map, ev) in [
            ("V2I", &self.v_to_i, &self.v_evidence),
            ("I2V", &self.i_to_v, &self.i_evidence),
        ] {
            for (s, (&d, e)) in map.iter().zip(ev).enumerate() {
                writeln!(w, "{dir},{s},{d},{},{},{:.6}", e.votes, e.runner_votes, e.cosine)?;
            }
        }
        Ok(())
    }
}

/// Votes per target centroid; each feature votes for its most similar
/// centroid, ties toward the lower index.
pub fn vote_assign<F: AsRef<[f64]>>(pseudo: &[F], target: &MemoryBank) -> Vec<usize> {
    let mut counts = vec![0; target.len()];
    for f in pseudo {
        counts[target.nearest(f.as_ref())] += 1;
    }
    counts
}

/// Pick a target from a vote histogram: shortlist the `shortlist` most
/// voted centroids (ties toward the lower index), then keep the one most
/// similar to the source centroid.
fn filter_votes(
    histogram: Vec<usize>,
    src_centroid: &[f64],
    tgt: &MemoryBank,
    shortlist: usize,
) -> (usize, MatchEvidence) {
    let mut order: Vec<usize> = (0..histogram.len()).filter(|&j| histogram[j] > 0).collect();
    order.sort_by(|&a, &b| histogram[b].cmp(&histogram[a]).then(a.cmp(&b)));
    order.truncate(shortlist.max(1));
    let mut best = order[0];
    let mut best_sim = dot(src_centroid, tgt.centroid(best));
    for &c in &order[1..] {
        let s = dot(src_centroid, tgt.centroid(c));
        if s > best_sim {
            best = c;
            best_sim = s;
        }
    }
    let runner_votes = order.iter().filter(|&&c| c != best).map(|&c| histogram[c]).max().unwrap_or(0);
    let ev = MatchEvidence {
        votes: histogram[best],
        runner_votes,
        cosine: best_sim,
        histogram,
    };
    (best, ev)
}

/// One matching direction: translate the members of each source cluster,
/// vote against the target bank, and filter the shortlist by similarity.
pub fn sfm_match_direction<F: AsRef<[f64]>>(
    src_features: &[F],
    src_labeling: &PseudoLabeling,
    gen: &Network,
    src_bank: &MemoryBank,
    tgt_bank: &MemoryBank,
    shortlist: usize,
) -> Result<(Vec<usize>, Vec<MatchEvidence>)> {
    if src_bank.is_empty() || tgt_bank.is_empty() {
        return Err(Error::contract("matching needs non-empty banks"));
    }
    if src_labeling.num_clusters != src_bank.len() {
        return Err(Error::contract(format!(
            "{} source clusters but bank has {}",
            src_labeling.num_clusters,
            src_bank.len()
        )));
    }
    let translated = translate_batch(gen, src_features)?;
    let mut dst = Vec::with_capacity(src_bank.len());
    let mut evidence = Vec::with_capacity(src_bank.len());
    for (c, members) in src_labeling.members.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::contract(format!("source cluster {c} has no members")));
        }
        let pseudo: Vec<&[f64]> = members.iter().map(|&i| translated[i].as_slice()).collect();
        let hist = vote_assign(&pseudo, tgt_bank);
        let (d, ev) = filter_votes(hist, src_bank.centroid(c), tgt_bank, shortlist);
        dst.push(d);
        evidence.push(ev);
    }
    Ok((dst, evidence))
}

/// Both directions, visible-to-infrared with `gen_vi` and back with `gen_iv`.
#[allow(clippy::too_many_arguments)]
pub fn sfm_match<F: AsRef<[f64]>>(
    v_features: &[F],
    v_labeling: &PseudoLabeling,
    i_features: &[F],
    i_labeling: &PseudoLabeling,
    gen_vi: &Network,
    gen_iv: &Network,
    bank_v: &MemoryBank,
    bank_i: &MemoryBank,
    shortlist: usize,
) -> Result<MatchTable> {
    let (v_to_i, v_evidence) =
        sfm_match_direction(v_features, v_labeling, gen_vi, bank_v, bank_i, shortlist)?;
    let (i_to_v, i_evidence) =
        sfm_match_direction(i_features, i_labeling, gen_iv, bank_i, bank_v, shortlist)?;
    Ok(MatchTable { v_to_i, i_to_v, v_evidence, i_evidence })
}

/// Greedy one-to-one matching on centroid similarity; clusters left over on
/// the larger side take their most similar counterpart.
pub fn greedy_match(bank_v: &MemoryBank, bank_i: &MemoryBank) -> MatchTable {
    let (kv, ki) = (bank_v.len(), bank_i.len());
    let sim = |a: usize, b: usize| dot(bank_v.centroid(a), bank_i.centroid(b));
    let mut pairs: Vec<(usize, usize)> = (0..kv).flat_map(|a| (0..ki).map(move |b| (a, b))).collect();
    pairs.sort_by(|&(a1, b1), &(a2, b2)| {
        sim(a2, b2).total_cmp(&sim(a1, b1)).then((a1, b1).cmp(&(a2, b2)))
    });
    let mut v_to_i = vec![usize::MAX; kv];
    let mut i_to_v = vec![usize::MAX; ki];
    let mut left = kv.min(ki);
    for (a, b) in pairs {
        if left == 0 {
            break;
        }
        if v_to_i[a] == usize::MAX && i_to_v[b] == usize::MAX {
            v_to_i[a] = b;
            i_to_v[b] = a;
            left -= 1;
        }
    }
    for (a, m) in v_to_i.iter_mut().enumerate() {
        if *m == usize::MAX {
            *m = bank_i.nearest(bank_v.centroid(a));
        }
    }
    for (b, m) in i_to_v.iter_mut().enumerate() {
        if *m == usize::MAX {
            *m = bank_v.nearest(bank_i.centroid(b));
        }
    }
    let ev = |cos: f64| MatchEvidence { votes: 0, runner_votes: 0, cosine: cos, histogram: Vec::new() };
    let v_evidence = v_to_i.iter().enumerate().map(|(a, &b)| ev(sim(a, b))).collect();
    let i_evidence = i_to_v.iter().enumerate().map(|(b, &a)| ev(sim(a, b))).collect();
    MatchTable { v_to_i, i_to_v, v_evidence, i_evidence }
}

/// Most frequent identity among each cluster's members (ties to the lower id).
pub fn majority_identity(labeling: &PseudoLabeling, identities: &[usize]) -> Vec<usize> {
    labeling
        .members
        .iter()
        .map(|m| {
            let mut ids: Vec<usize> = m.iter().map(|&i| identities[i]).collect();
            ids.sort_unstable();
            let mut best = (0, ids[0]);
            let mut run = (0, ids[0]);
            for &id in &ids {
                if id == run.1 {
                    run.0 += 1;
                } else {
                    run = (1, id);
                }
                if run.0 > best.0 {
                    best = run;
                }
            }
            best.1
        })
        .collect()
}

/// Fraction of source clusters whose match carries the same majority
/// identity, per direction `(V→I, I→V)`.
pub fn matching_accuracy(table: &MatchTable, v_major: &[usize], i_major: &[usize]) -> (f64, f64) {
    let frac = |map: &[usize], src: &[usize], dst: &[usize]| {
        if map.is_empty() {
            return 0.0;
        }
        let ok = map.iter().enumerate().filter(|&(s, &d)| src[s] == dst[d]).count();
        ok as f64 / map.len() as f64
    };
    (
        frac(&table.v_to_i, v_major, i_major),
        frac(&table.i_to_v, i_major, v_major),
    )
}

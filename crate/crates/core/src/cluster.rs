//! Density clustering of unit vectors under cosine distance.

use std::collections::VecDeque;

use crate::diffcore::tensor::dot;
use crate::error::{Error, Result};

pub const NOISE: i64 = -1;

/// Pseudo labels for one modality. `labels[i] == -1` marks noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabeling {
    pub labels: Vec<i64>,
    pub num_clusters: usize,
    /// `members[c]` lists sample positions with label `c`, ascending.
    pub members: Vec<Vec<usize>>,
}

impl PseudoLabeling {
    pub fn from_labels(labels: Vec<i64>) -> Result<Self> {
        let k = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
        let mut members = vec![Vec::new(); k];
        for (i, &l) in labels.iter().enumerate() {
            if l < NOISE {
                return Err(Error::contract(format!("label {l} below -1")));
            }
            if l >= 0 {
                members[l as usize].push(i);
            }
        }
        if let Some(c) = members.iter().position(|m| m.is_empty()) {
            return Err(Error::contract(format!("cluster {c} has no members")));
        }
        Ok(PseudoLabeling { labels, num_clusters: k, members })
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }
}

/// DBSCAN with distance `1 - cos`. Neighborhoods are inclusive and count the
/// point itself. Points are scanned in ascending index order; a border point
/// joins the first cluster that reaches it.
pub fn dbscan<F: AsRef<[f64]>>(features: &[F], eps: f64, min_pts: usize) -> Result<PseudoLabeling> {
    if features.is_empty() {
        return Err(Error::contract("dbscan on an empty feature list"));
    }
    if !(eps > 0.0 && eps < 2.0) {
        return Err(Error::config(format!("dbscan eps must lie in (0, 2), got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::config("dbscan min_pts must be >= 1"));
    }
    let neighbors = neighborhoods(features, eps);
    let n = features.len();
    const UNSEEN: i64 = -2;
    let mut labels = vec![UNSEEN; n];
    let mut next = 0i64;
    let mut queue = VecDeque::new();
    for i in 0..n {
        if labels[i] != UNSEEN {
            continue;
        }
        if neighbors[i].len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        let c = next;
        next += 1;
        labels[i] = c;
        queue.extend(neighbors[i].iter().copied());
        while let Some(q) = queue.pop_front() {
            if labels[q] == NOISE {
                labels[q] = c;
                continue;
            }
            if labels[q] != UNSEEN {
                continue;
            }
            labels[q] = c;
            if neighbors[q].len() >= min_pts {
                queue.extend(neighbors[q].iter().copied());
            }
        }
    }
    PseudoLabeling::from_labels(labels)
}

fn neighborhoods<F: AsRef<[f64]>>(features: &[F], eps: f64) -> Vec<Vec<usize>> {
    let n = features.len();
    let mut out = vec![Vec::new(); n];
    for i in 0..n {
        out[i].push(i);
    }
    for i in 0..n {
        let a = features[i].as_ref();
        for j in (i + 1)..n {
            if 1.0 - dot(a, features[j].as_ref()) <= eps {
                out[i].push(j);
                out[j].push(i);
            }
        }
    }
    for nb in &mut out {
        nb.sort_unstable();
    }
    out
}

/// Labels over a set of dataset samples, with augmented twins inheriting
/// the label of their original.
#[derive(Debug, Clone)]
pub struct LabeledModality {
    /// Dataset indices of the originals that were clustered.
    pub originals: Vec<usize>,
    /// Twin dataset index per original, if any.
    pub twins: Vec<Option<usize>>,
    pub labeling: PseudoLabeling,
}

impl LabeledModality {
    /// Pseudo label for dataset sample `idx` (original or twin), if present.
    pub fn label_of(&self, idx: usize) -> Option<i64> {
        self.originals
            .iter()
            .position(|&o| o == idx)
            .or_else(|| self.twins.iter().position(|&t| t == Some(idx)))
            .map(|p| self.labeling.labels[p])
    }

    /// Positions (into `originals`) usable in loss batches: noise excluded.
    pub fn trainable(&self) -> Vec<usize> {
        (0..self.originals.len())
            .filter(|&p| self.labeling.labels[p] != NOISE)
            .collect()
    }
}

/// Attach a labeling computed over `originals` to the dataset structure.
pub fn relabel(
    dataset: &crate::datagen::EmbeddingDataset,
    originals: Vec<usize>,
    labeling: PseudoLabeling,
) -> Result<LabeledModality> {
    if originals.len() != labeling.labels.len() {
        return Err(Error::contract(format!(
            "{} originals but {} labels",
            originals.len(),
            labeling.labels.len()
        )));
    }
    let twins = originals.iter().map(|&i| dataset.twin_of(i)).collect();
    Ok(LabeledModality { originals, twins, labeling })
}

/// Adjusted Rand index between two labelings; each `-1` counts as its own singleton.
pub fn adjusted_rand_index(a: &[i64], b: &[i64]) -> f64 {
    use std::collections::HashMap;
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let key = |l: i64, i: usize| if l < 0 { (true, i as i64) } else { (false, l) };
    let mut table: HashMap<((bool, i64), (bool, i64)), u64> = HashMap::new();
    let mut ra: HashMap<(bool, i64), u64> = HashMap::new();
    let mut rb: HashMap<(bool, i64), u64> = HashMap::new();
    for i in 0..n {
        let (ka, kb) = (key(a[i], i), key(b[i], i));
        *table.entry((ka, kb)).or_default() += 1;
        *ra.entry(ka).or_default() += 1;
        *rb.entry(kb).or_default() += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = ra.values().map(|&v| c2(v)).sum();
    let sb: f64 = rb.values().map(|&v| c2(v)).sum();
    let total = c2(n as u64);
    let expected = sa * sb / total;
    let max = (sa + sb) / 2.0;
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

//! Cluster-centroid memory banks with momentum updates.

use crate::bit;
use crate::cluster::PseudoLabeling;
use crate::datagen::Modality;
use crate::diffcore::tensor::{self, DenseTensor};
use crate::diffcore::Network;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankKind {
    Real,
    Pseudo,
}

/// `K` unit-norm centroids for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    centroids: Vec<Vec<f64>>,
    pub modality: Modality,
    pub kind: BankKind,
    /// Momentum `λ`: `c ← normalize(λ c + (1 − λ) z)`.
    pub rate: f64,
}

impl MemoryBank {
    pub fn from_centroids(
        centroids: Vec<Vec<f64>>,
        modality: Modality,
        kind: BankKind,
        rate: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::config(format!("bank update rate {rate} outside [0, 1]")));
        }
        if centroids.is_empty() {
            return Err(Error::contract("memory bank needs at least one centroid"));
        }
        let dim = centroids[0].len();
        let centroids = centroids
            .iter()
            .map(|c| {
                if c.len() != dim {
                    return Err(Error::dim("centroid widths differ"));
                }
                tensor::normalized(c)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MemoryBank { centroids, modality, kind, rate })
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j]
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    /// `[K, d]` snapshot.
    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor::from_rows(&self.centroids).expect("uniform widths")
    }

    /// Bank whose entry `k` is this bank's entry `order[k]`.
    pub fn reindexed(&self, order: &[usize]) -> Result<MemoryBank> {
        let centroids = order
            .iter()
            .map(|&j| {
                self.centroids
                    .get(j)
                    .cloned()
                    .ok_or_else(|| Error::contract(format!("bank index {j} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MemoryBank { centroids, ..self.clone() })
    }

    /// Index of the most similar centroid; ties go to the lower index.
    pub fn nearest(&self, z: &[f64]) -> usize {
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for (j, c) in self.centroids.iter().enumerate() {
            let s = tensor::dot(z, c);
            if s > best_sim {
                best_sim = s;
                best = j;
            }
        }
        best
    }

    pub fn ema_update(&mut self, j: usize, z: &[f64]) -> Result<()> {
        let rate = self.rate;
        let c = self
            .centroids
            .get_mut(j)
            .ok_or_else(|| Error::contract(format!("cluster {j} out of range")))?;
        if z.len() != c.len() {
            return Err(Error::dim("feature width differs from bank"));
        }
        let mixed: Vec<f64> = c
            .iter()
            .zip(z)
            .map(|(a, b)| rate * a + (1.0 - rate) * b)
            .collect();
        *c = tensor::normalized(&mixed)?;
        Ok(())
    }
}

/// Bank with one centroid per cluster: the normalized mean of its members.
pub fn init_bank<F: AsRef<[f64]>>(
    features: &[F],
    labeling: &PseudoLabeling,
    modality: Modality,
    kind: BankKind,
    rate: f64,
) -> Result<MemoryBank> {
    if labeling.num_clusters == 0 {
        return Err(Error::contract("cannot build a bank from zero clusters"));
    }
    if features.len() != labeling.labels.len() {
        return Err(Error::contract("features and labels differ in length"));
    }
    let dim = features[0].as_ref().len();
    let mut centroids = Vec::with_capacity(labeling.num_clusters);
    for (c, members) in labeling.members.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::contract(format!("cluster {c} is empty")));
        }
        let mut mean = vec![0.0; dim];
        for &i in members {
            for (m, v) in mean.iter_mut().zip(features[i].as_ref()) {
                *m += v;
            }
        }
        let inv = 1.0 / members.len() as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        let c = tensor::normalized(&mean).map_err(|_| {
            Error::contract(format!("cluster {c} has a zero mean; centroid undefined"))
        })?;
        centroids.push(c);
    }
    MemoryBank::from_centroids(centroids, modality, kind, rate)
}

/// Pseudo bank for the opposite modality: translate each source member with
/// `gen` and average per source cluster. The bank is indexed by source cluster.
pub fn init_pseudo_bank<F: AsRef<[f64]>>(
    src_features: &[F],
    labeling: &PseudoLabeling,
    gen: &Network,
    src_modality: Modality,
    rate: f64,
) -> Result<MemoryBank> {
    let translated = bit::translate_batch(gen, src_features)?;
    init_bank(&translated, labeling, src_modality.other(), BankKind::Pseudo, rate)
}

//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

pub mod criteria;
pub mod grad;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn unit(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v = gaussian(d, rng);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// `n` unit vectors around `k` random centers with per-coordinate spread.
pub fn blobs(n: usize, d: usize, k: usize, spread: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let centers: Vec<Vec<f64>> = (0..k).map(|_| unit(d, rng)).collect();
    (0..n)
        .map(|_| {
            let c = &centers[rng.random_range(0..k)];
            let v: Vec<f64> = c.iter().map(|x| x + spread * Distribution::<f64>::sample(&StandardNormal, rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Central-difference gradient.
pub fn numeric_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let a = f(&p);
            p[i] = x[i] - h;
            let b = f(&p);
            p[i] = x[i];
            (a - b) / (2.0 * h)
        })
        .collect()
}

/// Density clustering oracle: core points from the full distance matrix,
/// clusters as connected components of the core graph (numbered by their
/// smallest core index), border points joining the lowest-numbered adjacent
/// cluster.
pub fn dbscan_oracle(x: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<i64> {
    let n = x.len();
    let near = |i: usize, j: usize| {
        let c: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum();
        1.0 - c <= eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut c = i;
        while p[c] != r {
            let nx = p[c];
            p[c] = r;
            c = nx;
        }
        r
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut root_id = std::collections::BTreeMap::new();
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            let next = root_id.len() as i64;
            root_id.entry(r).or_insert(next);
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                root_id[&find(&mut parent, i)]
            } else {
                (0..n)
                    .filter(|&j| core[j] && near(i, j))
                    .map(|j| root_id[&find(&mut parent, j)])
                    .min()
                    .unwrap_or(-1)
            }
        })
        .collect()
}

/// Retrieval scores from a ranked relevance list, using precision-at-k sums.
pub struct RankOracle {
    pub ap: f64,
    pub inp: f64,
    pub first: usize,
}

pub fn rank_oracle(ranked_relevance: &[bool]) -> Option<RankOracle> {
    let n = ranked_relevance.iter().filter(|&&r| r).count();
    if n == 0 {
        return None;
    }
    let mut ap = 0.0;
    for k in 1..=ranked_relevance.len() {
        if ranked_relevance[k - 1] {
            let p_at_k = ranked_relevance[..k].iter().filter(|&&r| r).count() as f64 / k as f64;
            ap += p_at_k;
        }
    }
    let last = ranked_relevance.iter().rposition(|&r| r).unwrap() + 1;
    let first = ranked_relevance.iter().position(|&r| r).unwrap() + 1;
    Some(RankOracle { ap: ap / n as f64, inp: n as f64 / last as f64, first })
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Median of a small sample.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// The modality-gap benchmark preset shipped in `configs/`.
pub fn benchmark() -> uvireid::pipeline::TrainConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.txt");
    uvireid::pipeline::TrainConfig::load(&path).unwrap()
}

//! Measurements shared by the per-topic suites and the acceptance run.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use uvireid::cluster::dbscan;
use uvireid::datagen::{generate, generate_split, EmbeddingDataset, GenSpec, Modality};
use uvireid::diffcore::Network;
use uvireid::membank::{init_bank, BankKind};
use uvireid::pipeline::config::Matcher;
use uvireid::pipeline::{score_query, train, TrainConfig};
use uvireid::plc::{fit_bmm, BetaComponent, BetaMixture};
use uvireid::sfm::{majority_identity, matching_accuracy, sfm_match};

use super::{blobs, dbscan_oracle, permutations, rank_oracle, rng};

// ---- clustering ----

pub struct DbscanTally {
    pub instances: usize,
    pub mismatches: usize,
    pub clusters: usize,
    pub noise: usize,
}

fn dbscan_instance(seed: u64) -> (Vec<Vec<f64>>, f64, usize) {
    let mut r = rng(seed);
    let n = r.random_range(5..=200);
    let d = r.random_range(2..=8);
    let k = r.random_range(1..=6);
    let spread = r.random_range(0.02..0.4);
    let x = blobs(n, d, k, spread, &mut r);
    (x, r.random_range(0.02..0.6), r.random_range(1..=8))
}

pub fn dbscan_agreement(instances: u64) -> DbscanTally {
    let mut t = DbscanTally { instances: instances as usize, mismatches: 0, clusters: 0, noise: 0 };
    for seed in 0..instances {
        let (x, eps, min_pts) = dbscan_instance(seed);
        let got = dbscan(&x, eps, min_pts).unwrap();
        if got.labels != dbscan_oracle(&x, eps, min_pts) {
            t.mismatches += 1;
        }
        t.clusters += got.num_clusters;
        t.noise += got.noise_count();
    }
    t
}

// ---- noise model ----

pub fn beta_draws(a: f64, b: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let d = Beta::new(a, b).unwrap();
    (0..n).map(|_| d.sample(&mut r).clamp(1e-4, 1.0 - 1e-4)).collect()
}

/// Datasets (out of `count`) whose EM log-likelihood ever drops by more than 1e-9.
pub fn em_likelihood_drops(count: u64) -> usize {
    let mut bad = 0;
    for seed in 0..count {
        let mut r = rng(500 + seed);
        let n = r.random_range(4..300);
        let (a1, b1) = (r.random_range(0.5..10.0), r.random_range(0.5..10.0));
        let (a2, b2) = (r.random_range(0.5..10.0), r.random_range(0.5..10.0));
        let split = r.random_range(0.0..1.0);
        let mut xs = beta_draws(a1, b1, n, seed);
        let ys = beta_draws(a2, b2, n, seed + 10_000);
        for (x, y) in xs.iter_mut().zip(ys) {
            if r.random_range(0.0..1.0) < split {
                *x = y;
            }
        }
        let (_, trace) = fit_bmm(&xs, 25).unwrap();
        if trace.log_likelihood.windows(2).any(|w| w[1] < w[0] - 1e-9) {
            bad += 1;
        }
    }
    bad
}

/// Distance of the dominant component's mean from 2/7, one per seed, for
/// 1000 draws from Beta(2, 5).
pub fn single_beta_errors() -> Vec<f64> {
    (0..5)
        .map(|seed| {
            let (m, _) = fit_bmm(&beta_draws(2.0, 5.0, 1000, 40 + seed), 10).unwrap();
            let k = if m.weights[0] >= m.weights[1] { 0 } else { 1 };
            (m.components[k].mean() - 2.0 / 7.0).abs()
        })
        .collect()
}

/// Fitted clean weight for a balanced Beta(2,8) + Beta(8,2) sample, one per seed.
pub fn balanced_mixture_weights() -> Vec<f64> {
    (0..5)
        .map(|seed| {
            let mut xs = beta_draws(2.0, 8.0, 500, 70 + seed);
            xs.extend(beta_draws(8.0, 2.0, 500, 90 + seed));
            fit_bmm(&xs, 10).unwrap().0.weights[0]
        })
        .collect()
}

pub fn posterior_cases() -> Vec<BetaMixture> {
    let mix = |c: [(f64, f64); 2], pi: f64| BetaMixture {
        components: [
            BetaComponent { alpha: c[0].0, beta: c[0].1 },
            BetaComponent { alpha: c[1].0, beta: c[1].1 },
        ],
        weights: [pi, 1.0 - pi],
        ..BetaMixture::initial()
    };
    vec![
        mix([(2.0, 5.0), (5.0, 2.0)], 0.5),
        mix([(2.0, 8.0), (8.0, 2.0)], 0.8),
        mix([(1.5, 6.0), (3.0, 3.0)], 0.3),
        mix([(3.0, 9.0), (4.0, 4.0)], 0.6),
    ]
}

/// Cases whose posterior is not monotone on a 999-point grid or does not
/// cross one half between the component means.
pub fn posterior_grid_failures() -> usize {
    posterior_cases()
        .iter()
        .filter(|m| {
            let grid: Vec<f64> = (1..1000).map(|i| m.noise_posterior(i as f64 / 1000.0)).collect();
            let monotone = grid.windows(2).all(|w| w[1] >= w[0] - 1e-12);
            let lo = m.noise_posterior(m.components[0].mean() * 0.5);
            let hi = m.noise_posterior(0.5 + 0.5 * m.components[1].mean());
            !(monotone && lo < 0.5 && hi > 0.5)
        })
        .count()
}

// ---- metrics ----

/// Similarity for gallery item `g` when `perm[r] = g` places it at rank `r`.
pub fn sims_for(perm: &[usize]) -> Vec<f64> {
    let mut s = vec![0.0; perm.len()];
    for (r, &g) in perm.iter().enumerate() {
        s[g] = 1.0 - 0.1 * r as f64;
    }
    s
}

pub struct MetricTally {
    pub arrangements: usize,
    pub mismatches: usize,
    /// Arrangements where the query's INP exceeds its AP.
    pub inp_above_ap: usize,
}

/// Every positive mask and ordering of up to `max_g` gallery items.
pub fn metric_arrangements(max_g: usize) -> MetricTally {
    let mut t = MetricTally { arrangements: 0, mismatches: 0, inp_above_ap: 0 };
    for g in 1..=max_g {
        let perms = permutations(g);
        for mask in 1u32..(1 << g) {
            let positive: Vec<bool> = (0..g).map(|i| mask & (1 << i) != 0).collect();
            for perm in &perms {
                let got = score_query(&sims_for(perm), &positive).unwrap();
                let ranked: Vec<bool> = perm.iter().map(|&i| positive[i]).collect();
                let want = rank_oracle(&ranked).unwrap();
                t.arrangements += 1;
                if (got.ap - want.ap).abs() > 1e-12
                    || (got.inp - want.inp).abs() > 1e-12
                    || got.first_hit != want.first
                {
                    t.mismatches += 1;
                }
                if got.inp > got.ap + 1e-12 {
                    t.inp_above_ap += 1;
                }
            }
        }
    }
    t
}

/// Largest gap between the permutation mean of AP with one positive and H_G/G.
pub fn single_positive_gap(max_g: usize) -> f64 {
    (1..=max_g)
        .map(|g| {
            let mut positive = vec![false; g];
            positive[0] = true;
            let perms = permutations(g);
            let mean: f64 =
                perms.iter().map(|p| score_query(&sims_for(p), &positive).unwrap().ap).sum::<f64>() / perms.len() as f64;
            let harmonic: f64 = (1..=g).map(|r| 1.0 / r as f64).sum();
            (mean - harmonic / g as f64).abs()
        })
        .fold(0.0, f64::max)
}

// ---- matching ----

fn side(data: &EmbeddingDataset, m: Modality) -> (Vec<Vec<f64>>, Vec<usize>) {
    let idx = data.originals(m);
    let f = idx.iter().map(|&i| data.samples()[i].feature.clone()).collect();
    let ids = idx.iter().map(|&i| data.samples()[i].identity).collect();
    (f, ids)
}

/// SFM with identity generators on raw features of a zero-gap world with
/// full-rank (well separated) anchors, one `(V→I, I→V)` accuracy per seed.
pub fn zero_gap_accuracy(seeds: u64) -> Vec<(f64, f64)> {
    (0..seeds)
        .map(|seed| {
            let spec = GenSpec { delta_mod: 0.0, sigma_id: 0.03, identity_rank: 0, seed, ..GenSpec::default() };
            let data = generate(&spec).unwrap();
            let (fv, idv) = side(&data, Modality::Visible);
            let (fi, idi) = side(&data, Modality::Infrared);
            let lv = dbscan(&fv, 0.3, 4).unwrap();
            let li = dbscan(&fi, 0.3, 4).unwrap();
            assert_eq!(lv.num_clusters, spec.num_identities);
            assert_eq!(li.num_clusters, spec.num_identities);
            let bv = init_bank(&fv, &lv, Modality::Visible, BankKind::Real, 0.2).unwrap();
            let bi = init_bank(&fi, &li, Modality::Infrared, BankKind::Real, 0.2).unwrap();
            let id = Network::identity(spec.dim);
            let t = sfm_match(&fv, &lv, &fi, &li, &id, &id, &bv, &bi, 2).unwrap();
            matching_accuracy(&t, &majority_identity(&lv, &idv), &majority_identity(&li, &idi))
        })
        .collect()
}

pub fn seeded(mut cfg: TrainConfig, seed: u64) -> TrainConfig {
    cfg.seed = seed;
    cfg.gen.seed = seed;
    cfg
}

/// Mean match accuracy of the first stage-3 epoch, using generators trained
/// in stage 2.
pub fn first_match(cfg: &TrainConfig) -> f64 {
    let mut cfg = cfg.clone();
    cfg.epochs_stage3 = 1;
    let (data, _) = generate_split(&cfg.gen).unwrap();
    let (_, log) = train(&cfg, &data).unwrap();
    let row = log.curves.iter().find(|r| r.stage == 3).unwrap();
    0.5 * (row.match_v2i + row.match_i2v)
}

pub fn match_accuracies(base: &TrainConfig, matcher: Matcher, seeds: u64) -> Vec<f64> {
    (0..seeds)
        .map(|s| {
            let mut cfg = seeded(base.clone(), s);
            cfg.matcher = matcher;
            first_match(&cfg)
        })
        .collect()
}

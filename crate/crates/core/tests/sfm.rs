//! Cluster matching on synthetic worlds with known correspondence.

mod common;

use common::{criteria, median};
use uvireid::cluster::dbscan;
use uvireid::datagen::{generate, GenSpec, Modality};
use uvireid::membank::{init_bank, BankKind};
use uvireid::pipeline::config::Matcher;
use uvireid::pipeline::TrainConfig;
use uvireid::sfm::greedy_match;

#[test]
fn zero_gap_identity_generators_match_everything() {
    for (seed, acc) in criteria::zero_gap_accuracy(5).into_iter().enumerate() {
        assert_eq!(acc, (1.0, 1.0), "seed {seed}");
    }
}

#[test]
fn trained_generators_match_at_moderate_gap() {
    let accs = criteria::match_accuracies(&TrainConfig::default(), Matcher::Sfm, 5);
    assert!(median(&accs) >= 0.95, "accuracies {accs:?}");
}

#[test]
fn sfm_at_least_greedy_on_gap_benchmark() {
    let bench = common::benchmark();
    let sfm = criteria::match_accuracies(&bench, Matcher::Sfm, 5);
    let greedy = criteria::match_accuracies(&bench, Matcher::Greedy, 5);
    assert!(median(&sfm) >= median(&greedy), "sfm {sfm:?} greedy {greedy:?}");
}

#[test]
fn greedy_is_one_to_one_on_equal_sizes() {
    let data = generate(&GenSpec { seed: 9, ..GenSpec::default() }).unwrap();
    let feats = |m: Modality| -> Vec<Vec<f64>> {
        data.originals(m).iter().map(|&i| data.samples()[i].feature.clone()).collect()
    };
    let (fv, fi) = (feats(Modality::Visible), feats(Modality::Infrared));
    let lv = dbscan(&fv, 0.3, 4).unwrap();
    let li = dbscan(&fi, 0.3, 4).unwrap();
    let bv = init_bank(&fv, &lv, Modality::Visible, BankKind::Real, 0.2).unwrap();
    let bi = init_bank(&fi, &li, Modality::Infrared, BankKind::Real, 0.2).unwrap();
    assert_eq!(bv.len(), bi.len());
    let t = greedy_match(&bv, &bi);
    for (a, &b) in t.v_to_i.iter().enumerate() {
        assert_eq!(t.i_to_v[b], a);
    }
}

//! Finite-difference checks for every training loss.

mod common;

use common::grad::{self, TOL};
use uvireid::mla::LfcMode;

fn check(name: &str, err: f64) {
    assert!(err < TOL, "{name}: worst relative error {err:e}");
}

#[test]
fn cluster_nce_gradients() {
    check("cluster_nce", grad::cluster_nce());
}

#[test]
fn plc_gradients() {
    check("plc", grad::plc());
}

#[test]
fn cma_gradients() {
    check("cma", grad::cma());
}

#[test]
fn lfc_batch_softmax_gradients() {
    check("lfc", grad::lfc(LfcMode::BatchSoftmax));
}

#[test]
fn lfc_mean_gradients() {
    check("lfc_mean", grad::lfc(LfcMode::Mean));
}

#[test]
fn lfc_gradients_through_translator() {
    check("lfc via translator", grad::lfc_through_translator());
}

#[test]
fn cycle_gradients() {
    check("cycle", grad::cycle());
}

#[test]
fn generator_adversarial_gradients() {
    check("generator", grad::generator_adversarial());
}

#[test]
fn critic_gradients_match() {
    check("critic", grad::critic());
}

mod common;

use common::gradcheck::*;

const SEEDS: std::ops::Range<u64> = 0..20;
const TOL: f64 = 1e-4;

fn all_seeds(name: &str, case: impl Fn(u64) -> f64) {
    for seed in SEEDS {
        let e = case(seed);
        assert!(e < TOL, "{name}, seed {seed}: relative error {e:.3e}");
    }
}

#[test]
fn convolutions() {
    all_seeds("conv", conv_case);
}

#[test]
fn attention_fusion() {
    all_seeds("attention", attention_case);
}

#[test]
fn inr_head() {
    all_seeds("inr", inr_case);
}

#[test]
fn l1_loss() {
    all_seeds("l1", l1_case);
}

#[test]
fn remaining_tape_ops() {
    all_seeds("tape ops", tape_ops_case);
}

#[test]
fn denoiser_with_attention() {
    all_seeds("denoiser", |s| denoiser_case(s, true));
}

#[test]
fn denoiser_with_concat_fusion() {
    all_seeds("denoiser", |s| denoiser_case(s, false));
}

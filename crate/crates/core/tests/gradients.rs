//! Central finite-difference checks for every differentiable tape op and
//! for the composed model.

mod common;

use common::{
    activation_cases, conv1d_cases, cross_entropy_cases, end_to_end_error, gating_cases,
    linear_cases, pooling_cases, project, random, structural_cases, OpCase,
};
use mfam_core::autodiff::Tape;
use mfam_core::model::Aggregator;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check(cases: Vec<OpCase>) {
    for case in cases {
        let e = case.max_rel_err();
        assert!(e < 1e-6, "{}: relative error {e:e}", case.name);
    }
}

#[test]
fn conv1d_all_dilations() {
    check(conv1d_cases());
}

#[test]
fn linear_and_affine() {
    check(linear_cases());
}

#[test]
fn activations() {
    check(activation_cases());
}

#[test]
fn pooling() {
    check(pooling_cases());
}

#[test]
fn cross_entropy_every_label() {
    check(cross_entropy_cases());
}

#[test]
fn elementwise_and_structural() {
    check(structural_cases());
}

#[test]
fn gating_and_reversal() {
    check(gating_cases());
}

#[test]
fn grad_reverse_negates_and_scales() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = [random(&[5], &mut rng)];
    let mut tape = Tape::new();
    let v = tape.leaf(x[0].clone());
    let r = tape.grad_reverse(v, 0.7).unwrap();
    let loss = project(&mut tape, r, 99);
    let g = tape.backward(loss).unwrap();
    assert_eq!(tape.value(r), &x[0]);
    let mut plain = Tape::new();
    let pv = plain.leaf(x[0].clone());
    let loss = project(&mut plain, pv, 99);
    let pg = plain.backward(loss).unwrap();
    for (a, b) in g.get(v).data().iter().zip(pg.get(pv).data()) {
        assert!((a + 0.7 * b).abs() < 1e-12);
    }
}

#[test]
fn composed_model_attention() {
    for lambda in [0.0, 0.6] {
        let e = end_to_end_error(Aggregator::AttentionMil, lambda);
        assert!(e < 1e-4, "lambda {lambda}: relative error {e:e}");
    }
}

#[test]
fn composed_model_gap() {
    let e = end_to_end_error(Aggregator::Gap, 1.0);
    assert!(e < 1e-4, "relative error {e:e}");
}

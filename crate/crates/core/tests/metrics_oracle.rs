//! Metrics against an independent recount in rational arithmetic.

mod common;

use busseg::metrics::{confusion, exact, report, ConfusionCounts};
use common::oracles::{identity_violations, metrics_mismatches, random_mask, recount};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn report_matches_recount() {
    assert_eq!(metrics_mismatches(100, 7), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let pred = random_mask(&mut rng, h, w);
        let gt = random_mask(&mut rng, h, w);
        let floats = report(&confusion(&pred, &gt).unwrap()).as_array();
        for (f, e) in floats.iter().zip(recount(&pred, &gt)) {
            assert_eq!(f.is_some(), e.is_some());
            if let (Some(f), Some(e)) = (f, e) {
                assert_eq!(*f, *e.numer() as f64 / *e.denom() as f64);
            }
        }
    }
}

#[test]
fn identities_on_random_counts() {
    assert_eq!(identity_violations(1000, 8), 0);
}

#[test]
fn dice_is_symmetric_and_fp_flip_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let pred = random_mask(&mut rng, 12, 12);
        let gt = random_mask(&mut rng, 12, 12);
        let ab = report(&confusion(&pred, &gt).unwrap());
        let ba = report(&confusion(&gt, &pred).unwrap());
        assert_eq!(ab.dice, ba.dice);

        let c = confusion(&pred, &gt).unwrap();
        if c.fp == 0 {
            continue;
        }
        let flipped = ConfusionCounts {
            fp: c.fp - 1,
            tn: c.tn + 1,
            ..c
        };
        let (before, after) = (exact(&c), exact(&flipped));
        assert!(after.accuracy >= before.accuracy);
        assert!(after.specificity >= before.specificity);
        match (before.precision, after.precision) {
            (Some(b), Some(a)) => assert!(a >= b),
            (Some(_), None) => {}
            other => panic!("{other:?}"),
        }
    }
}

//! Property tests over random inputs.

mod common;

use busseg::autodiff::Tape;
use busseg::data::{augment, split_indices, AugmentationPolicy, Label, Sample, SplitSpec};
use busseg::distance::{distance_map, DistanceMapConfig};
use busseg::loss::{dc_loss, tempered_softmax, total_loss};
use busseg::metrics::{exact, ConfusionCounts};
use busseg::nn::{LstmCell, ParamStore};
use busseg::train::{Adam, AdamConfig};
use busseg::{Mask, Tensor};
use proptest::prelude::*;

fn logits_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, 2..12)
}

fn mask_strategy(max: usize) -> impl Strategy<Value = Mask> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(0u8..=1, h * w).prop_map(move |d| Mask::new(h, w, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_normalised_and_shift_invariant(
        logits in logits_vec(),
        sigma in prop::sample::select(vec![0.1, 0.5, 1.0, 3.0, 10.0]),
        shift in -100.0f64..100.0,
    ) {
        let p = tempered_softmax(&logits, sigma).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let moved: Vec<f64> = logits.iter().map(|f| f + shift).collect();
        let q = tempered_softmax(&moved, sigma).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn hotter_softmax_has_lower_peak(
        logits in prop::collection::vec(-3.0f64..3.0, 2..8),
        sigma in 0.5f64..4.0,
        factor in 1.05f64..2.0,
    ) {
        let spread = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - logits.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let peak = |s: f64| tempered_softmax(&logits, s).unwrap().into_iter().fold(0.0, f64::max);
        prop_assert!(peak(sigma * factor) < peak(sigma));
    }

    #[test]
    fn losses_are_non_negative(
        seed in any::<u64>(),
        log_sigma in -1.0f64..1.0,
        raw in (-5.0f64..5.0, -5.0f64..5.0),
    ) {
        let mask = common::random_masks(3, 6, seed).pop().unwrap();
        let target = distance_map(&mask, DistanceMapConfig::new(2).unwrap());
        let mut tape = Tape::new();
        let logits = tape.param(common::random_tensor(&[1, 5, 6, 6], seed, -4.0, 4.0));
        let ls = tape.param(Tensor::scalar(log_sigma));
        let dc = dc_loss(&mut tape, logits, std::slice::from_ref(&target), ls).unwrap();
        let dc_value = tape.value(dc).data()[0];
        prop_assert!(dc_value >= 0.0);
        let seg = tape.scalar(dc_value * 0.5);
        let (a, b) = (tape.scalar(raw.0), tape.scalar(raw.1));
        let total = total_loss(&mut tape, seg, dc, a, b).unwrap();
        prop_assert!(tape.value(total).data()[0] >= 0.0);
    }

    #[test]
    fn distance_sign_follows_mask(mask in mask_strategy(20), d in 1usize..7) {
        let m = distance_map(&mask, DistanceMapConfig::new(d).unwrap());
        for (r, &v) in m.real.iter().zip(mask.data()) {
            if v == 1 {
                prop_assert!(*r >= 0.0);
            } else {
                prop_assert!(*r <= 0.0);
            }
            prop_assert!(r.abs() <= d as f64);
        }
        prop_assert!(m.classes.iter().all(|&c| (c as usize) < 2 * d + 1));
    }

    #[test]
    fn augmentation_keeps_masks_binary(mask in mask_strategy(24), seed in any::<u64>(), epoch in 0u64..5) {
        let (h, w) = (mask.height(), mask.width());
        let sample = Sample {
            image: Tensor::full(&[1, h, w], 0.5),
            mask,
            label: Label::Benign,
            source: "p".into(),
        };
        let policy = AugmentationPolicy { seed, ..AugmentationPolicy::default() };
        let out = augment(&sample, &policy, epoch, 0);
        prop_assert!(out.mask.data().iter().all(|&v| v <= 1));
        prop_assert_eq!(out.image.shape(), sample.image.shape());
        prop_assert!(out.image.data().iter().all(|&v| (0.0..=0.5 + 1e-6).contains(&v)));
    }

    #[test]
    fn rotation_roughly_preserves_blob_area(
        cy in 13.0f64..18.0,
        cx in 13.0f64..18.0,
        ry in 1.5f64..6.0,
        rx in 1.5f64..6.0,
        seed in any::<u64>(),
    ) {
        let mask = Mask::from_fn(32, 32, |y, x| {
            ((y as f64 - cy) / ry).powi(2) + ((x as f64 - cx) / rx).powi(2) <= 1.0
        });
        let area = mask.foreground();
        prop_assume!(area >= 10);
        let sample = Sample {
            image: Tensor::zeros(&[1, 32, 32]),
            mask,
            label: Label::Malignant,
            source: "blob".into(),
        };
        let policy = AugmentationPolicy { seed, ..AugmentationPolicy::default() };
        let out = augment(&sample, &policy, 0, 0).mask.foreground();
        let change = (out as f64 - area as f64).abs() / area as f64;
        prop_assert!(change < 0.3, "{} -> {}", area, out);
    }

    #[test]
    fn split_is_a_partition(
        labels in prop::collection::vec(prop::sample::select(Label::ALL.to_vec()), 0..60),
        fraction in 0.0f64..=1.0,
        seed in any::<u64>(),
        stratify in any::<bool>(),
    ) {
        let spec = SplitSpec { train_fraction: fraction, seed, stratify };
        let (train, test) = split_indices(&labels, &spec);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
    }

    #[test]
    fn concat_then_slice_recovers_inputs(
        ca in 1usize..4,
        cb in 1usize..4,
        seed in any::<u64>(),
    ) {
        let a: Tensor<f32> = common::random_tensor(&[2, ca, 3, 4], seed, -1e3, 1e3).cast();
        let b: Tensor<f32> = common::random_tensor(&[2, cb, 3, 4], seed ^ 1, -1e-3, 1e-3).cast();
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let cat = tape.concat_channels(&[va, vb]).unwrap();
        let sa = tape.slice(cat, 1, 0, ca).unwrap();
        let sb = tape.slice(cat, 1, ca, cb).unwrap();
        prop_assert_eq!(tape.value(sa).data(), a.data());
        prop_assert_eq!(tape.value(sb).data(), b.data());
    }

    #[test]
    fn identity_kernel_is_identity(c in 1usize..4, seed in any::<u64>()) {
        let x = common::random_tensor(&[2, c, 5, 3], seed, -10.0, 10.0);
        let mut k = Tensor::zeros(&[c, c, 1, 1]);
        for i in 0..c {
            k.data_mut()[i * c + i] = 1.0;
        }
        let mut tape = Tape::new();
        let xv = tape.param(x.clone());
        let kv = tape.constant(k);
        let y = tape.conv2d(xv, kv, None, 1, 0).unwrap();
        prop_assert_eq!(tape.value(y).data(), x.data());
        let r = tape.constant(common::random_tensor(&[2, c, 5, 3], seed ^ 7, -1.0, 1.0));
        let prod = tape.mul(y, r).unwrap();
        let l = tape.sum_all(prod);
        let g = tape.backward(l).unwrap();
        prop_assert_eq!(g.get(xv).unwrap().data(), tape.value(r).data());
    }

    #[test]
    fn primitive_chains_stay_finite(ops in prop::collection::vec(0u8..9, 1..=50), seed in any::<u64>()) {
        let mut tape = Tape::<f64>::new();
        let input = tape.param(common::random_tensor(&[1, 2, 4, 4], seed, -3.0, 3.0));
        let mut x = input;
        for op in ops {
            x = match op {
                0 => tape.sigmoid(x),
                1 => tape.tanh(x),
                2 => tape.relu(x),
                3 => tape.softplus(x),
                4 => tape.log_softmax(x, 1).unwrap(),
                5 => tape.scale(x, 0.9),
                6 => {
                    let u = tape.upsample2x(x).unwrap();
                    tape.max_pool2d(u, 2, 2).unwrap()
                }
                7 => {
                    let s = tape.mul(x, x).unwrap();
                    tape.tanh(s)
                }
                _ => {
                    let k = tape.constant(common::random_tensor(&[2, 2, 3, 3], seed ^ 3, -0.5, 0.5));
                    tape.conv2d(x, k, None, 1, 1).unwrap()
                }
            };
        }
        let l = tape.mean_all(x);
        prop_assert!(tape.value(x).all_finite());
        let g = tape.backward(l).unwrap();
        prop_assert!(g.get(input).is_none_or(|t| t.all_finite()));
    }

    #[test]
    fn lstm_hidden_is_bounded(seed in any::<u64>(), len in 1usize..8, scale in 0.1f64..20.0) {
        let mut store = ParamStore::<f64>::new(seed);
        let cell = LstmCell::new(&mut store, "l", 3, 4).unwrap();
        for (k, p) in store.iter_mut().enumerate() {
            let shape = p.value.shape().to_vec();
            p.value = common::random_tensor(&shape, seed.wrapping_add(k as u64), -scale, scale);
        }
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let xs: Vec<_> = (0..len)
            .map(|t| tape.constant(common::random_tensor(&[2, 3], seed ^ t as u64, -scale, scale)))
            .collect();
        for h in cell.sequence(&mut tape, &params, &xs).unwrap() {
            prop_assert!(tape.value(h).data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn adam_second_moment_non_negative(
        grads in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 6), 1..10),
        lr in 0.0f64..1.0,
    ) {
        let mut p = Tensor::<f64>::zeros(&[6]);
        let mut adam = Adam::new(AdamConfig { lr, ..AdamConfig::default() });
        for g in grads {
            let g = Tensor::new(&[6], g).unwrap();
            adam.step_tensors(&mut [&mut p], &[Some(&g)]).unwrap();
            prop_assert!(adam.v[0].data().iter().all(|&v| v >= 0.0));
            prop_assert!(p.all_finite());
        }
    }

    #[test]
    fn f1_equals_dice(tp in 0u64..1_000_000, fp in 0u64..1_000_000, fn_ in 0u64..1_000_000, tn in 0u64..1_000_000) {
        let e = exact(&ConfusionCounts { tp, fp, fn_, tn });
        if let (Some(f1), Some(dice)) = (e.f1, e.dice) {
            prop_assert_eq!(f1, dice);
        }
        for v in e.as_array().into_iter().flatten() {
            prop_assert!(*v.numer() <= *v.denom());
        }
    }
}

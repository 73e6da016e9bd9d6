//! Independent reference computations shared by the detailed suites and the
//! acceptance report.

use busseg::autodiff::Tape;
use busseg::backbone::NodeId;
use busseg::distance::{distance_map, DistanceMapConfig};
use busseg::loss::tempered_softmax;
use busseg::metrics::{confusion, exact, ConfusionCounts};
use busseg::model::Network;
use busseg::nn::{ForwardMode, LstmCell, LstmState, ParamStore, GATES};
use busseg::{Mask, ModelConfig, Tensor};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{brute_force, random_masks, random_tensor};

// ---- distance maps ----

/// Masks whose fast real map differs from the brute force in any bit, out of
/// 200 random 32×32 masks (the first two are all-empty and all-full).
pub fn distance_mismatches() -> Vec<String> {
    let mut bad = Vec::new();
    for (k, mask) in random_masks(200, 32, 2024).iter().enumerate() {
        let d = 1 + k % 8;
        let fast = distance_map(mask, DistanceMapConfig::new(d).unwrap());
        let slow = brute_force(mask, d);
        if let Some(p) = fast.real.iter().zip(&slow).position(|(a, b)| a.to_bits() != b.to_bits()) {
            bad.push(format!("mask {k} pixel {p}: {} vs {}", fast.real[p], slow[p]));
        }
    }
    bad
}

// ---- metrics ----

pub type Q = Ratio<u64>;

fn q(n: u64, d: u64) -> Option<Q> {
    (d != 0).then(|| Q::new(n, d))
}

/// Seven metrics from a direct per-pixel recount, f1 in its harmonic-mean form.
pub fn recount(pred: &Mask, gt: &Mask) -> [Option<Q>; 7] {
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            match (pred.get(y, x), gt.get(y, x)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    let p = q(tp, tp + fp);
    let r = q(tp, tp + fn_);
    let f1 = match (p, r) {
        (Some(p), Some(r)) if p + r != Q::from_integer(0) => Some(Q::from_integer(2) * p * r / (p + r)),
        _ => None,
    };
    [
        q(tp + tn, tp + fp + fn_ + tn),
        q(tn, tn + fp),
        p,
        r,
        f1,
        q(tp, tp + fp + fn_),
        q(2 * tp, 2 * tp + fp + fn_),
    ]
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
    let p: f64 = [0.0, 0.02, 0.3, 0.7, 1.0][rng.gen_range(0..5)];
    Mask::new(h, w, (0..h * w).map(|_| u8::from(rng.gen_bool(p))).collect()).unwrap()
}

/// Pairs out of `n` random pairs where the report disagrees with the recount.
pub fn metrics_mismatches(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..n {
        let (h, w) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let pred = random_mask(&mut rng, h, w);
        let gt = random_mask(&mut rng, h, w);
        let c = confusion(&pred, &gt).unwrap();
        if c.total() != (h * w) as u64 || exact(&c).as_array() != recount(&pred, &gt) {
            bad += 1;
        }
    }
    bad
}

pub fn random_counts(rng: &mut ChaCha8Rng) -> ConfusionCounts {
    let mut draw = || if rng.gen_bool(0.1) { 0 } else { rng.gen_range(0..100_000u64) };
    ConfusionCounts {
        tp: draw(),
        fp: draw(),
        fn_: draw(),
        tn: draw(),
    }
}

/// Count vectors out of `n` violating f1 == dice or dice == 2J/(1+J)
/// where both sides are defined.
pub fn identity_violations(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let one = Q::from_integer(1);
    let two = Q::from_integer(2);
    (0..n)
        .filter(|_| {
            let e = exact(&random_counts(&mut rng));
            let f1_ok = match (e.f1, e.dice) {
                (Some(f), Some(d)) => f == d,
                _ => true,
            };
            let j_ok = match (e.jaccard, e.dice) {
                (Some(j), Some(d)) => d == two * j / (one + j),
                (j, d) => j.is_none() == d.is_none(),
            };
            !(f1_ok && j_ok)
        })
        .count()
}

// ---- lstm ----

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain-array LSTM cell read from a parameter store.
pub struct LstmOracle {
    n: usize,
    m: usize,
    w: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl LstmOracle {
    pub fn from_store(store: &ParamStore<f64>, name: &str, n: usize, m: usize) -> Self {
        let read = |kind: &str| {
            GATES
                .iter()
                .map(|g| store.value(store.id(&format!("{name}.{kind}_{g}")).unwrap()).data().to_vec())
                .collect()
        };
        Self {
            n,
            m,
            w: read("w"),
            u: read("u"),
            b: read("b"),
        }
    }

    /// `(h', c')` from one input vector and state.
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let pre = |g: usize, r: usize| {
            let wx: f64 = (0..self.n).map(|k| self.w[g][r * self.n + k] * x[k]).sum();
            let uh: f64 = (0..self.m).map(|k| self.u[g][r * self.m + k] * h[k]).sum();
            wx + uh + self.b[g][r]
        };
        let mut h2 = vec![0.0; self.m];
        let mut c2 = vec![0.0; self.m];
        for r in 0..self.m {
            let f = sigmoid(pre(0, r));
            let i = sigmoid(pre(1, r));
            let o = sigmoid(pre(2, r));
            let cand = pre(3, r).tanh();
            c2[r] = f * c[r] + i * cand;
            h2[r] = o * c2[r].tanh();
        }
        (h2, c2)
    }
}

fn zeroed_cell(n: usize, m: usize) -> (ParamStore<f64>, LstmCell) {
    let mut store = ParamStore::new(0);
    let cell = LstmCell::new(&mut store, "l", n, m).unwrap();
    for p in store.iter_mut() {
        p.value = p.value.map(|_| 0.0);
    }
    (store, cell)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst deviations of the zero-parameter example, the c=1 example and a
/// three-step sequence against the chained oracle.
pub fn lstm_hand_errors() -> [f64; 3] {
    // zero params, zero state
    let (store, cell) = zeroed_cell(3, 4);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let x = tape.constant(Tensor::from_f64(&[1, 3], &[5.0, -1.0, 2.0]).unwrap());
    let s0 = LstmState::zeros(&mut tape, 1, 4);
    let s = cell.step(&mut tape, &p, x, s0).unwrap();
    let zero = max_diff(tape.value(s.h).data(), &[0.0; 4]).max(max_diff(tape.value(s.c).data(), &[0.0; 4]));

    // zero params, m = 1, previous cell 1
    let (store, cell) = zeroed_cell(1, 1);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let x = tape.constant(Tensor::from_f64(&[1, 1], &[0.3]).unwrap());
    let prev = LstmState {
        h: tape.constant(Tensor::zeros(&[1, 1])),
        c: tape.constant(Tensor::ones(&[1, 1])),
    };
    let s = cell.step(&mut tape, &p, x, prev).unwrap();
    let unit = (tape.value(s.c).data()[0] - 0.5)
        .abs()
        .max((tape.value(s.h).data()[0] - 0.231059).abs());

    // constant input, random params, three steps
    let (n, m) = (2, 3);
    let mut store = ParamStore::<f64>::new(0);
    let cell = LstmCell::new(&mut store, "l", n, m).unwrap();
    for (k, p) in store.iter_mut().enumerate() {
        let shape = p.value.shape().to_vec();
        p.value = random_tensor(&shape, 300 + k as u64, -1.0, 1.0);
    }
    let xv = [0.8, -0.4];
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let xs: Vec<_> = (0..3)
        .map(|_| tape.constant(Tensor::from_f64(&[1, n], &xv).unwrap()))
        .collect();
    let hs = cell.sequence(&mut tape, &p, &xs).unwrap();
    let oracle = LstmOracle::from_store(&store, "l", n, m);
    let (mut h, mut c) = (vec![0.0; m], vec![0.0; m]);
    let mut seq = 0.0f64;
    for &hv in &hs {
        (h, c) = oracle.step(&xv, &h, &c);
        seq = seq.max(max_diff(tape.value(hv).data(), &h));
    }
    [zero, unit, seq]
}

// ---- tempered softmax ----

pub struct SoftmaxReport {
    pub sum_err: f64,
    pub shift_err: f64,
    pub uniform_exact: bool,
}

/// `count` random logit vectors at each temperature in `sigmas`.
pub fn softmax_report(count: usize, sigmas: &[f64], seed: u64) -> SoftmaxReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SoftmaxReport {
        sum_err: 0.0,
        shift_err: 0.0,
        uniform_exact: true,
    };
    for &sigma in sigmas {
        for _ in 0..count {
            let k = rng.gen_range(2..16);
            let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let p = tempered_softmax(&logits, sigma).unwrap();
            rep.sum_err = rep.sum_err.max((p.iter().sum::<f64>() - 1.0).abs());
            let shift: f64 = rng.gen_range(-50.0..50.0);
            let moved: Vec<f64> = logits.iter().map(|f| f + shift).collect();
            rep.shift_err = rep.shift_err.max(max_diff(&p, &tempered_softmax(&moved, sigma).unwrap()));
            let flat = vec![logits[0]; k];
            let u = tempered_softmax(&flat, sigma).unwrap();
            rep.uniform_exact &= u.iter().all(|&v| v == 1.0 / k as f64);
        }
    }
    rep
}

// ---- shapes ----

/// Runs one eval forward of `config` on `n` images and lists every shape
/// that breaks the expected node, attention and head layout.
pub fn shape_violations(config: &ModelConfig, n: usize) -> Vec<String> {
    let (network, store) = Network::build::<f32>(config, 3).unwrap();
    let s = config.image_size;
    let mut tape = Tape::new();
    let params = store.bind(&mut tape);
    let images: Tensor<f32> = random_tensor(&[n, config.input_channels, s, s], 5, 0.0, 1.0).cast();
    let x = tape.constant(images);
    let out = network.forward(&mut tape, &params, x, ForwardMode::eval()).unwrap();
    let mut bad = Vec::new();
    fn expect(bad: &mut Vec<String>, what: String, got: &[usize], want: Vec<usize>) {
        if got != want.as_slice() {
            bad.push(format!("{what}: {got:?} != {want:?}"));
        }
    }
    for i in 0..config.depth {
        for j in 0..config.depth - i {
            let id = NodeId::new(i, j);
            match out.backbone.nodes.get(&id) {
                Some(&v) => expect(
                    &mut bad,
                    format!("node {id}"),
                    tape.shape(v),
                    vec![n, config.level_channels(i), s >> i, s >> i],
                ),
                None => bad.push(format!("node {id} missing")),
            }
        }
    }
    if out.backbone.nodes.len() != config.node_count() {
        bad.push(format!("{} nodes evaluated", out.backbone.nodes.len()));
    }
    let c = config.fused_channels();
    expect(&mut bad, "channel map".into(), tape.shape(out.fusion.cbam.channel_map), vec![n, c, 1, 1]);
    expect(&mut bad, "spatial map".into(), tape.shape(out.fusion.cbam.spatial_map), vec![n, 1, s, s]);
    expect(&mut bad, "seg logits".into(), tape.shape(out.seg_logits()), vec![n, 1, s, s]);
    expect(
        &mut bad,
        "dc logits".into(),
        tape.shape(out.dc_logits()),
        vec![n, config.num_classes(), s, s],
    );
    bad
}

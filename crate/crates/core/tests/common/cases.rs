//! Gradient checks of every differentiable primitive, grouped by kind.

use busseg::autodiff::{Tape, Var};
use busseg::distance::{distance_map, DistanceMapConfig};
use busseg::loss;
use busseg::nn::{dropout, Bound, ForwardMode, LstmCell, LstmState, ParamStore};
use busseg::{Mask, Tensor};

use super::{grad_check, random_tensor, GradErr};

/// Per-element tolerance for single primitives.
pub const PRIMITIVE_TOL: f64 = 1e-6;
/// Relative tolerance for the unrolled LSTM sequence.
pub const SEQUENCE_TOL: f64 = 1e-5;

pub type Case = (String, Vec<GradErr>);

type Unary = fn(&mut Tape<f64>, Var) -> Var;
type Binary = fn(&mut Tape<f64>, Var, Var) -> busseg::Result<Var>;

fn five(seed: u64) -> Tensor<f64> {
    random_tensor(&[5], seed, -2.0, 2.0)
}

pub fn unary() -> Vec<Case> {
    let ops: [(&str, Unary); 5] = [
        ("sigmoid", |t, x| t.sigmoid(x)),
        ("tanh", |t, x| t.tanh(x)),
        ("relu", |t, x| t.relu(x)),
        ("exp", |t, x| t.exp(x)),
        ("softplus", |t, x| t.softplus(x)),
    ];
    let mut out: Vec<Case> = ops
        .iter()
        .enumerate()
        .map(|(seed, (name, op))| (name.to_string(), grad_check(&[five(seed as u64)], |t, v| Ok(op(t, v[0])))))
        .collect();
    out.push((
        "ln".into(),
        grad_check(&[random_tensor(&[5], 9, 0.2, 3.0)], |t, v| Ok(t.ln(v[0]))),
    ));
    out.push(("scale".into(), grad_check(&[five(10)], |t, v| Ok(t.scale(v[0], -1.7)))));
    out
}

pub fn binary() -> Vec<Case> {
    let ops: [(&str, Binary); 4] = [
        ("add", |t, a, b| t.add(a, b)),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
        ("div", |t, a, b| t.div(a, b)),
    ];
    let mut out = Vec::new();
    for (name, op) in ops {
        out.push((
            name.to_string(),
            grad_check(&[five(1), random_tensor(&[5], 2, 0.5, 2.0)], |t, v| op(t, v[0], v[1])),
        ));
        out.push((
            format!("{name} broadcast"),
            grad_check(
                &[random_tensor(&[2, 3, 1], 3, -1.0, 1.0), random_tensor(&[1, 4], 4, 0.5, 2.0)],
                |t, v| op(t, v[0], v[1]),
            ),
        ));
    }
    out
}

pub fn reductions() -> Vec<Case> {
    let x = random_tensor(&[2, 3, 4], 5, -1.0, 1.0);
    vec![
        ("sum_axes".into(), grad_check(std::slice::from_ref(&x), |t, v| t.sum_axes(v[0], 1, 3))),
        ("mean_axes".into(), grad_check(std::slice::from_ref(&x), |t, v| t.mean_axes(v[0], 0, 2))),
        ("max_axes".into(), grad_check(&[x], |t, v| t.max_axes(v[0], 1, 3))),
        ("sum_all".into(), grad_check(&[five(6)], |t, v| Ok(t.sum_all(v[0])))),
        ("mean_all".into(), grad_check(&[five(7)], |t, v| Ok(t.mean_all(v[0])))),
        (
            "log_softmax".into(),
            grad_check(&[random_tensor(&[2, 5, 3], 8, -3.0, 3.0)], |t, v| t.log_softmax(v[0], 1)),
        ),
    ]
}

pub fn shape_ops() -> Vec<Case> {
    let a = random_tensor(&[1, 2, 3, 3], 11, -1.0, 1.0);
    let b = random_tensor(&[1, 1, 3, 3], 12, -1.0, 1.0);
    let c = random_tensor(&[2, 3], 13, -1.0, 1.0);
    let d = random_tensor(&[2, 2], 14, -1.0, 1.0);
    vec![
        (
            "concat_channels".into(),
            grad_check(&[a.clone(), b], |t, v| t.concat_channels(&[v[0], v[1]])),
        ),
        ("concat axis 1".into(), grad_check(&[c, d], |t, v| t.concat(&[v[0], v[1]], 1))),
        ("slice".into(), grad_check(std::slice::from_ref(&a), |t, v| t.slice(v[0], 2, 1, 2))),
        ("reshape".into(), grad_check(&[a], |t, v| t.reshape(v[0], &[6, 3]))),
    ]
}

pub fn spatial() -> Vec<Case> {
    let x = random_tensor(&[2, 2, 6, 6], 21, -1.0, 1.0);
    let k = random_tensor(&[3, 2, 3, 3], 22, -0.5, 0.5);
    let b = random_tensor(&[3], 23, -0.5, 0.5);
    let k2 = random_tensor(&[3, 2, 2, 2], 24, -0.5, 0.5);
    let k7 = random_tensor(&[1, 2, 7, 7], 25, -0.5, 0.5);
    vec![
        (
            "conv2d same".into(),
            grad_check(&[x.clone(), k, b], |t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 1)),
        ),
        (
            "conv2d strided".into(),
            grad_check(&[x.clone(), k2], |t, v| t.conv2d(v[0], v[1], None, 2, 0)),
        ),
        (
            "conv2d 7x7".into(),
            grad_check(&[x.clone(), k7], |t, v| t.conv2d(v[0], v[1], None, 1, 3)),
        ),
        ("max_pool2d".into(), grad_check(std::slice::from_ref(&x), |t, v| t.max_pool2d(v[0], 2, 2))),
        ("upsample2x".into(), grad_check(&[x], |t, v| t.upsample2x(v[0]))),
    ]
}

pub fn linear_and_dropout() -> Vec<Case> {
    let x = random_tensor(&[3, 4], 31, -1.0, 1.0);
    let w = random_tensor(&[2, 4], 32, -1.0, 1.0);
    let b = random_tensor(&[2], 33, -1.0, 1.0);
    vec![
        (
            "linear".into(),
            grad_check(&[x.clone(), w, b], |t, v| t.linear(v[0], v[1], Some(v[2]))),
        ),
        (
            "dropout".into(),
            grad_check(&[x], |t, v| dropout(t, v[0], 0.5, ForwardMode::train(4))),
        ),
    ]
}

/// One cell step from a random state (first entry) and a three-step
/// sequence with n = m = 2 over every parameter matrix (second entry).
pub fn lstm() -> Vec<Case> {
    let mut store = ParamStore::<f64>::new(41);
    let cell = LstmCell::new(&mut store, "cell", 2, 2).unwrap();
    let params: Vec<Tensor<f64>> = store.iter().map(|(_, p)| p.value.clone()).collect();
    let np = params.len();

    let mut step_inputs = params.clone();
    step_inputs.extend([
        random_tensor(&[2, 2], 47, -1.0, 1.0),
        random_tensor(&[2, 2], 45, -1.0, 1.0),
        random_tensor(&[2, 2], 46, -1.0, 1.0),
    ]);
    let step = grad_check(&step_inputs, |t, v| {
        let bound = Bound::new(v[..np].to_vec());
        let prev = LstmState {
            h: v[np + 1],
            c: v[np + 2],
        };
        let next = cell.step(t, &bound, v[np], prev)?;
        t.concat(&[next.h, next.c], 1)
    });

    let mut seq_inputs = params;
    for s in 0..3 {
        seq_inputs.push(random_tensor(&[2, 2], 42 + s, -1.0, 1.0));
    }
    let seq = grad_check(&seq_inputs, |t, v| {
        let bound = Bound::new(v[..np].to_vec());
        let hs = cell.sequence(t, &bound, &v[np..])?;
        t.concat(&hs, 1)
    });
    vec![("lstm step".into(), step), ("lstm sequence".into(), seq)]
}

pub fn losses() -> Vec<Case> {
    let masks = vec![Mask::from_fn(4, 4, |y, x| y + x < 4), Mask::from_fn(4, 4, |y, _| y == 2)];
    let logits = random_tensor(&[2, 1, 4, 4], 51, -2.0, 2.0);
    let ls = random_tensor(&[1], 52, -0.3, 0.3);
    let seg = grad_check(&[logits, ls.clone()], |t, v| loss::seg_loss(t, v[0], &masks, v[1]));

    let cfg = DistanceMapConfig::new(1).unwrap();
    let targets: Vec<_> = masks.iter().map(|m| distance_map(m, cfg)).collect();
    let logits = random_tensor(&[2, 3, 4, 4], 53, -2.0, 2.0);
    let dc = grad_check(&[logits, ls], |t, v| loss::dc_loss(t, v[0], &targets, v[1]));

    let parts = random_tensor(&[4], 54, 0.1, 2.0);
    let total = grad_check(&[parts], |t, v| {
        let s = t.slice(v[0], 0, 0, 1)?;
        let d = t.slice(v[0], 0, 1, 1)?;
        let a = t.slice(v[0], 0, 2, 1)?;
        let b = t.slice(v[0], 0, 3, 1)?;
        loss::total_loss(t, s, d, a, b)
    });
    vec![("seg_loss".into(), seg), ("dc_loss".into(), dc), ("total_loss".into(), total)]
}

/// Every primitive group with its tolerance.
pub fn all_primitives() -> Vec<(Case, f64)> {
    let mut out = Vec::new();
    for group in [unary(), binary(), reductions(), shape_ops(), spatial(), linear_and_dropout(), losses()] {
        out.extend(group.into_iter().map(|c| (c, PRIMITIVE_TOL)));
    }
    let mut lstm = lstm().into_iter();
    out.push((lstm.next().unwrap(), PRIMITIVE_TOL));
    out.push((lstm.next().unwrap(), SEQUENCE_TOL));
    out
}

/// Worst per-element error of a group, with the failing case names.
pub fn worst(cases: &[Case], tol: f64) -> (f64, Vec<String>) {
    let mut worst = 0.0f64;
    let mut failing = Vec::new();
    for (name, errs) in cases {
        for (k, e) in errs.iter().enumerate() {
            worst = worst.max(e.elementwise);
            if e.elementwise.is_nan() || e.elementwise >= tol {
                failing.push(format!("{name} input {k}: {e:?}"));
            }
        }
    }
    (worst, failing)
}

#![allow(dead_code)]

pub mod cases;
pub mod oracles;

use busseg::autodiff::{Tape, Var};
use busseg::data::{Label, Sample};
use busseg::distance::{distance_map, DistanceMapConfig};
use busseg::model::Network;
use busseg::nn::{ForwardMode, ParamStore};
use busseg::{Mask, ModelConfig, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Largest `|a − fd| / (|fd| + 1e-12)` over all elements.
pub fn max_elementwise_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (n.abs() + 1e-12))
        .fold(0.0, f64::max)
}

/// Smallest |fd| treated as signal by [`significant_err`]; central
/// differences at `FD_STEP` carry roughly 1e-11 absolute noise.
pub const FD_SIGNAL_FLOOR: f64 = 1e-6;

/// Elementwise error over entries with `|fd| ≥ FD_SIGNAL_FLOOR`.
pub fn significant_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .filter(|(_, n)| n.abs() >= FD_SIGNAL_FLOOR)
        .map(|(a, n)| (a - n).abs() / n.abs())
        .fold(0.0, f64::max)
}

/// Errors of one gradient against central differences.
#[derive(Clone, Copy, Debug)]
pub struct GradErr {
    pub elementwise: f64,
    pub norm: f64,
    pub significant: f64,
}

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()) + norm(&mut b.iter().copied());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::from_f64(shape, &(0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<_>>()).unwrap()
}

/// Reduces any output to a scalar with fixed random weights so every output
/// element carries a distinct cotangent.
fn project(tape: &mut Tape<f64>, out: Var) -> Var {
    let shape = tape.shape(out).to_vec();
    let r = random_tensor(&shape, 0x9e37 + shape.iter().sum::<usize>() as u64, -1.0, 1.0);
    let r = tape.constant(r);
    let prod = tape.mul(out, r).unwrap();
    tape.sum_all(prod)
}

fn eval(inputs: &[Tensor<f64>], f: &impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let loss = project(&mut tape, out);
    tape.value(loss).data()[0]
}

/// Analytic gradient against central differences, one entry per input.
pub fn grad_check(inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) -> Vec<GradErr> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let loss = project(&mut tape, out);
    let grads = tape.backward(loss).unwrap();
    let mut errs = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut numeric = Vec::with_capacity(input.numel());
        for j in 0..input.numel() {
            let mut probe = inputs.to_vec();
            probe[k].data_mut()[j] += FD_STEP;
            let up = eval(&probe, &f);
            probe[k].data_mut()[j] -= 2.0 * FD_STEP;
            let down = eval(&probe, &f);
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        errs.push(GradErr {
            elementwise: max_elementwise_err(&analytic, &numeric),
            norm: rel_err(&analytic, &numeric),
            significant: significant_err(&analytic, &numeric),
        });
    }
    errs
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        depth: 2,
        base_channels: 2,
        input_channels: 1,
        image_size: 8,
        lstm_hidden: 4,
        lstm_layers: 2,
        spatial_kernel: 7,
        distance_threshold: 2,
        dropout: 0.5,
    }
}

pub fn disk_mask(size: usize, radius: f64) -> Mask {
    let c = (size as f64 - 1.0) / 2.0;
    Mask::from_fn(size, size, |y, x| {
        let (dy, dx) = (y as f64 - c, x as f64 - c);
        dy * dy + dx * dx <= radius * radius
    })
}

/// Disk lesion brighter than a mildly textured background.
pub fn disk_sample(size: usize, radius: f64) -> Sample {
    let mask = disk_mask(size, radius);
    let img: Vec<f32> = (0..size * size)
        .map(|p| {
            let texture = ((p * 7919) % 13) as f32 / 130.0;
            if mask.data()[p] == 1 {
                0.75 + texture
            } else {
                0.2 + texture
            }
        })
        .collect();
    Sample {
        image: Tensor::new(&[1, size, size], img).unwrap(),
        mask,
        label: Label::Benign,
        source: "disk".into(),
    }
}

/// Total loss of `network` on one fixed batch, training-mode forward with a
/// fixed dropout seed.
pub fn model_loss(
    network: &Network,
    store: &ParamStore<f64>,
    images: &Tensor<f64>,
    masks: &[Mask],
    with_grad: bool,
) -> (f64, Option<Vec<Vec<f64>>>) {
    let cfg = DistanceMapConfig::new(network.config.distance_threshold).unwrap();
    let targets: Vec<_> = masks.iter().map(|m| distance_map(m, cfg)).collect();
    let mut tape = Tape::new();
    let params = store.bind(&mut tape);
    let x = tape.constant(images.clone());
    let out = network.forward(&mut tape, &params, x, ForwardMode::train(77)).unwrap();
    let seg = network.loss.seg_loss(&mut tape, &params, out.seg_logits(), masks).unwrap();
    let dc = network.loss.dc_loss(&mut tape, &params, out.dc_logits(), &targets).unwrap();
    let total = network.loss.total(&mut tape, &params, seg, dc).unwrap();
    let value = tape.value(total).data()[0];
    if !with_grad {
        return (value, None);
    }
    let grads = tape.backward(total).unwrap();
    let per_param = params
        .vars()
        .iter()
        .zip(store.iter())
        .map(|(&v, (_, p))| {
            grads
                .get(v)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; p.value.numel()])
        })
        .collect();
    (value, Some(per_param))
}

/// End-to-end check of every parameter of the tiny model; returns the errors
/// over the concatenated gradient and the parameter count.
pub fn tiny_model_grad_check() -> (GradErr, usize) {
    let cfg = tiny_config();
    let (network, mut store) = Network::build::<f64>(&cfg, 5).unwrap();
    // Move the loss weights and temperatures off their symmetric start.
    for (name, v) in [
        ("loss.lambda_seg", 0.3),
        ("loss.lambda_dc", 0.8),
        ("loss.log_sigma_seg", 0.2),
        ("loss.log_sigma_dc", -0.15),
    ] {
        let id = store.id(name).unwrap();
        store.set(id, Tensor::scalar(v)).unwrap();
    }
    let images = random_tensor(&[2, 1, 8, 8], 31, 0.0, 1.0);
    let masks = vec![disk_mask(8, 2.5), Mask::from_fn(8, 8, |y, x| y > 2 && x < 5)];
    let (_, grads) = model_loss(&network, &store, &images, &masks, true);
    let analytic: Vec<f64> = grads.unwrap().concat();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    for id in ids {
        for j in 0..store.value(id).numel() {
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + FD_STEP;
            let up = model_loss(&network, &store, &images, &masks, false).0;
            store.value_mut(id).data_mut()[j] = orig - FD_STEP;
            let down = model_loss(&network, &store, &images, &masks, false).0;
            store.value_mut(id).data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    let err = GradErr {
        elementwise: max_elementwise_err(&analytic, &numeric),
        norm: rel_err(&analytic, &numeric),
        significant: significant_err(&analytic, &numeric),
    };
    (err, analytic.len())
}

/// Boundary, distance, clamp and sign recomputed pixel by pixel.
pub fn brute_force(mask: &Mask, d: usize) -> Vec<f64> {
    let (h, w) = (mask.height() as i64, mask.width() as i64);
    let at = |y: i64, x: i64| mask.data()[(y * w + x) as usize] == 1;
    let mut boundary = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !at(y, x) {
                continue;
            }
            let touches_background = (-1..=1).any(|dy| {
                (-1..=1).any(|dx| {
                    let (ny, nx) = (y + dy, x + dx);
                    ny >= 0 && nx >= 0 && ny < h && nx < w && !at(ny, nx)
                })
            });
            if touches_background {
                boundary.push((y, x));
            }
        }
    }
    let mut out = Vec::with_capacity((h * w) as usize);
    for y in 0..h {
        for x in 0..w {
            let mut best = d as f64;
            for &(by, bx) in &boundary {
                let dist = (((y - by).pow(2) + (x - bx).pow(2)) as f64).sqrt();
                best = best.min(dist);
            }
            out.push(if at(y, x) { best } else { -best });
        }
    }
    out
}

pub fn random_masks(count: usize, size: usize, seed: u64) -> Vec<Mask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = vec![Mask::zeros(size, size), Mask::from_fn(size, size, |_, _| true)];
    while masks.len() < count {
        let m = match masks.len() % 3 {
            0 => {
                let p: f64 = rng.gen_range(0.05..0.95);
                let bits: Vec<u8> = (0..size * size).map(|_| u8::from(rng.gen_bool(p))).collect();
                Mask::new(size, size, bits).unwrap()
            }
            1 => {
                let blobs: Vec<(f64, f64, f64)> = (0..rng.gen_range(1..4))
                    .map(|_| {
                        (
                            rng.gen_range(0.0..size as f64),
                            rng.gen_range(0.0..size as f64),
                            rng.gen_range(1.0..12.0),
                        )
                    })
                    .collect();
                Mask::from_fn(size, size, |y, x| {
                    blobs
                        .iter()
                        .any(|&(cy, cx, r)| (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r)
                })
            }
            _ => {
                let (y0, x0) = (rng.gen_range(0..size), rng.gen_range(0..size));
                let (y1, x1) = (rng.gen_range(y0..size), rng.gen_range(x0..size));
                Mask::from_fn(size, size, |y, x| (y0..=y1).contains(&y) && (x0..=x1).contains(&x))
            }
        };
        masks.push(m);
    }
    masks
}

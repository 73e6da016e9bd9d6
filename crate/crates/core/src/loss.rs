//! Segmentation and distance-class losses and their weighted combination.
//!
//! Each task tempers its logits by a learnable `σ`: `p = softmax(f / σ²)` for
//! the distance classes and `p = sigmoid(f / σ²)` for the mask. The total is
//! `λ_seg · L_seg + λ_dc · L_dc` with `λ = softplus(raw)` and `σ = exp(raw)`,
//! so all four stay positive for any raw value.

use crate::autodiff::{softplus, Tape, Var};
use crate::distance::DistanceClassMap;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::nn::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Smoothing term in the soft-Dice denominator.
pub const DICE_EPS: f64 = 1e-6;

/// `softplus⁻¹(1)`, the raw value giving an effective weight of 1.
pub fn unit_softplus_raw() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

#[derive(Clone, Debug)]
pub struct LossParams {
    pub lambda_seg: ParamId,
    pub lambda_dc: ParamId,
    pub log_sigma_seg: ParamId,
    pub log_sigma_dc: ParamId,
}

impl LossParams {
    /// Registers the four scalars at effective value 1.
    pub fn new<T: Real>(store: &mut ParamStore<T>) -> Result<Self> {
        let raw = unit_softplus_raw();
        Ok(Self {
            lambda_seg: store.register("loss.lambda_seg", &[1], Init::Constant(raw))?,
            lambda_dc: store.register("loss.lambda_dc", &[1], Init::Constant(raw))?,
            log_sigma_seg: store.register("loss.log_sigma_seg", &[1], Init::Constant(0.0))?,
            log_sigma_dc: store.register("loss.log_sigma_dc", &[1], Init::Constant(0.0))?,
        })
    }

    /// Effective `(λ_seg, λ_dc, σ_seg, σ_dc)`.
    pub fn effective<T: Real>(&self, store: &ParamStore<T>) -> [f64; 4] {
        let raw = |id| store.value(id).data()[0].to_f64_lossy();
        [
            softplus(raw(self.lambda_seg)),
            softplus(raw(self.lambda_dc)),
            raw(self.log_sigma_seg).exp(),
            raw(self.log_sigma_dc).exp(),
        ]
    }

    pub fn tempered_seg_logits<T: Real>(&self, tape: &mut Tape<T>, params: &Bound, logits: Var) -> Result<Var> {
        temper(tape, logits, params.var(self.log_sigma_seg))
    }

    pub fn seg_loss<T: Real>(&self, tape: &mut Tape<T>, params: &Bound, logits: Var, masks: &[Mask]) -> Result<Var> {
        seg_loss(tape, logits, masks, params.var(self.log_sigma_seg))
    }

    pub fn dc_loss<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        logits: Var,
        targets: &[DistanceClassMap],
    ) -> Result<Var> {
        dc_loss(tape, logits, targets, params.var(self.log_sigma_dc))
    }

    pub fn total<T: Real>(&self, tape: &mut Tape<T>, params: &Bound, seg: Var, dc: Var) -> Result<Var> {
        total_loss(tape, seg, dc, params.var(self.lambda_seg), params.var(self.lambda_dc))
    }
}

/// `f / σ²` with `σ = exp(log_sigma)`.
fn temper<T: Real>(tape: &mut Tape<T>, logits: Var, log_sigma: Var) -> Result<Var> {
    let neg2 = tape.scale(log_sigma, T::lit(-2.0));
    let inv_t2 = tape.exp(neg2);
    tape.mul(logits, inv_t2)
}

/// Value-level tempered softmax, `p_c ∝ exp(f_c / σ²)`.
pub fn tempered_softmax(logits: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::Config(format!("temperature {sigma} must be positive")));
    }
    if logits.is_empty() {
        return Err(Error::Usage("softmax of an empty vector".into()));
    }
    let inv = 1.0 / (sigma * sigma);
    let scaled: Vec<f64> = logits.iter().map(|&f| f * inv).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

fn stack_masks<T: Real>(masks: &[Mask]) -> Result<Tensor<T>> {
    let first = masks.first().ok_or_else(|| Error::Usage("empty mask batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if (m.height(), m.width()) != (h, w) {
            return Err(Error::Dimension(format!(
                "mask batch mixes {h}x{w} and {}x{}",
                m.height(),
                m.width()
            )));
        }
        data.extend(m.data().iter().map(|&v| T::lit(f64::from(v))));
    }
    Tensor::new(&[masks.len(), 1, h, w], data)
}

/// Mean binary cross-entropy on `sigmoid(f / σ²)` plus the soft-Dice term
/// `1 − 2Σpg / (Σp + Σg + ε)`. `logits` is `N×1×H×W`.
pub fn seg_loss<T: Real>(tape: &mut Tape<T>, logits: Var, masks: &[Mask], log_sigma: Var) -> Result<Var> {
    let (bce, dice) = seg_loss_terms(tape, logits, masks, log_sigma)?;
    tape.add(bce, dice)
}

/// The `(BCE, soft-Dice)` pair summed by [`seg_loss`].
pub fn seg_loss_terms<T: Real>(
    tape: &mut Tape<T>,
    logits: Var,
    masks: &[Mask],
    log_sigma: Var,
) -> Result<(Var, Var)> {
    let target = stack_masks::<T>(masks)?;
    if tape.shape(logits) != target.shape() {
        return Err(Error::Dimension(format!(
            "segmentation logits {:?} vs masks {:?}",
            tape.shape(logits),
            target.shape()
        )));
    }
    let g_sum = target.data().iter().copied().sum::<T>();
    let g = tape.constant(target);
    let z = temper(tape, logits, log_sigma)?;
    // BCE with logits: softplus(z) − g·z.
    let sp = tape.softplus(z);
    let gz = tape.mul(g, z)?;
    let bce = tape.sub(sp, gz)?;
    let bce = tape.mean_all(bce);
    let p = tape.sigmoid(z);
    let pg = tape.mul(p, g)?;
    let inter = tape.sum_all(pg);
    let p_sum = tape.sum_all(p);
    let offset = tape.scalar(g_sum + T::lit(DICE_EPS));
    let denom = tape.add(p_sum, offset)?;
    let ratio = tape.div(inter, denom)?;
    let ratio = tape.scale(ratio, T::lit(-2.0));
    let one = tape.scalar(T::one());
    let dice = tape.add(one, ratio)?;
    Ok((bce, dice))
}

/// Mean over pixels of `−Σ_c C_c log p_c`, `p = softmax(f / σ²)` along the
/// class axis of the `N×K×H×W` logits.
pub fn dc_loss<T: Real>(
    tape: &mut Tape<T>,
    logits: Var,
    targets: &[DistanceClassMap],
    log_sigma: Var,
) -> Result<Var> {
    let [n, k, h, w] = tape.value(logits).nchw()?;
    if targets.len() != n {
        return Err(Error::Dimension(format!(
            "{} distance targets for a batch of {n}",
            targets.len()
        )));
    }
    let plane = h * w;
    let mut one_hot = vec![T::zero(); n * k * plane];
    for (b, t) in targets.iter().enumerate() {
        if (t.height, t.width) != (h, w) {
            return Err(Error::Dimension(format!(
                "distance target {}x{} vs logits {h}x{w}",
                t.height, t.width
            )));
        }
        for (p, &c) in t.classes.iter().enumerate() {
            let c = c as usize;
            if c >= k {
                return Err(Error::Data(format!(
                    "distance class {c} out of range for {k} classes"
                )));
            }
            one_hot[(b * k + c) * plane + p] = T::one();
        }
    }
    let onehot = tape.constant(Tensor::new(&[n, k, h, w], one_hot)?);
    let z = temper(tape, logits, log_sigma)?;
    let logp = tape.log_softmax(z, 1)?;
    let picked = tape.mul(logp, onehot)?;
    let total = tape.sum_all(picked);
    Ok(tape.scale(total, T::lit(-1.0 / (n * plane) as f64)))
}

/// `softplus(raw_seg) · seg + softplus(raw_dc) · dc`.
pub fn total_loss<T: Real>(tape: &mut Tape<T>, seg: Var, dc: Var, raw_seg: Var, raw_dc: Var) -> Result<Var> {
    let l1 = tape.softplus(raw_seg);
    let l2 = tape.softplus(raw_dc);
    let a = tape.mul(l1, seg)?;
    let b = tape.mul(l2, dc)?;
    tape.add(a, b)
}

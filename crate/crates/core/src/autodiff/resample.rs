//! Bilinear ×2 upsampling with half-pixel centres (corners not aligned):
//! output index `o` samples input coordinate `(o + 0.5) / 2 − 0.5`, clamped to
//! the valid range.

use crate::tensor::Real;

/// Per output index: (low tap, high tap, weight on high tap).
fn taps<T: Real>(in_extent: usize) -> Vec<(usize, usize, T)> {
    (0..2 * in_extent)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_extent - 1);
            let hi = (lo + 1).min(in_extent - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            (lo, hi, T::lit(frac))
        })
        .collect()
}

pub(crate) fn forward<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (2 * h, 2 * w);
    let ty = taps::<T>(h);
    let tx = taps::<T>(w);
    let mut out = vec![T::zero(); planes * ho * wo];
    let mut rows = vec![T::zero(); wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for (i, &(y0, y1, fy)) in ty.iter().enumerate() {
            let r0 = &src[y0 * w..(y0 + 1) * w];
            let r1 = &src[y1 * w..(y1 + 1) * w];
            for (j, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                rows[j] = top + (bot - top) * fy;
            }
            dst[i * wo..(i + 1) * wo].copy_from_slice(&rows);
        }
    }
    out
}

pub(crate) fn backward<T: Real>(go: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (2 * h, 2 * w);
    let ty = taps::<T>(h);
    let tx = taps::<T>(w);
    let one = T::one();
    let mut gi = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let g = &go[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut gi[p * h * w..(p + 1) * h * w];
        for (i, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (j, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[i * wo + j];
                let top = v * (one - fy);
                let bot = v * fy;
                dst[y0 * w + x0] = dst[y0 * w + x0] + top * (one - fx);
                dst[y0 * w + x1] = dst[y0 * w + x1] + top * fx;
                dst[y1 * w + x0] = dst[y1 * w + x0] + bot * (one - fx);
                dst[y1 * w + x1] = dst[y1 * w + x1] + bot * fx;
            }
        }
    }
    gi
}

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Max pooling over square windows. Returns the pooled tensor and, for each
/// output element, the flat input index that won (first in row-major order on
/// ties).
pub(crate) fn forward<T: Real>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = input.nchw()?;
    if window == 0 || stride == 0 {
        return Err(Error::Config("pool window and stride must be positive".into()));
    }
    if window > h || window > w {
        return Err(Error::Dimension(format!(
            "pool window {window} larger than input extent {h}x{w}"
        )));
    }
    if window == stride && (h % stride != 0 || w % stride != 0) {
        return Err(Error::Dimension(format!(
            "input extent {h}x{w} not divisible by pool stride {stride}"
        )));
    }
    let ho = (h - window) / stride + 1;
    let wo = (w - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + (i * stride) * w + j * stride;
                for m in 0..window {
                    for q in 0..window {
                        let idx = base + (i * stride + m) * w + j * stride + q;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, ho, wo], out)?, argmax))
}

pub(crate) fn backward<T: Real>(input_numel: usize, argmax: &[usize], grad_out: &[T]) -> Vec<T> {
    let mut gi = vec![T::zero(); input_numel];
    for (&src, &g) in argmax.iter().zip(grad_out) {
        gi[src] = gi[src] + g;
    }
    gi
}

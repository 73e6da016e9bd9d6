//! 2-D cross-correlation (no kernel flip) with zero padding and stride.
//!
//! `out[n,k,i,j] = bias[k] + Σ_{c,m,q} in[n,c,i·S+m−P, j·S+q−P] · kernel[k,c,m,q]`,
//! out-of-frame reads contribute zero. A true convolution is the same sum with
//! the kernel rotated by 180°; only the cross-correlation form is provided.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Geometry of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    /// Number of filters; equals the output depth.
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Stride-1 convolution that preserves spatial extent (odd kernels only).
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0
        {
            return Err(Error::Config(format!(
                "conv spec {self:?}: channels, kernel and stride must be positive"
            )));
        }
        Ok(())
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    /// Output `(height, width)` for an input of the given extents.
    pub fn output_hw(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let h = conv_output_extent("height", height, self)?;
        let w = conv_output_extent("width", width, self)?;
        Ok((h, w))
    }
}

/// Spatial output extent `(in − F + 2P) / S + 1` of a convolution layer.
pub fn conv_output_shape(in_extent: usize, spec: &ConvSpec) -> Result<usize> {
    conv_output_extent("extent", in_extent, spec)
}

fn conv_output_extent(dim: &str, in_extent: usize, spec: &ConvSpec) -> Result<usize> {
    spec.validate()?;
    let padded = in_extent + 2 * spec.padding;
    if padded < spec.kernel {
        return Err(Error::Config(format!(
            "{dim} {in_extent} with padding {} is smaller than kernel {}",
            spec.padding, spec.kernel
        )));
    }
    let span = padded - spec.kernel;
    if !span.is_multiple_of(spec.stride) {
        return Err(Error::Config(format!(
            "{dim}: ({in_extent} - {} + 2*{}) = {span} is not divisible by stride {}",
            spec.kernel, spec.padding, spec.stride
        )));
    }
    Ok(span / spec.stride + 1)
}

/// Range of output indices `j` whose tap `j*stride + offset - pad` lands in `[0, extent)`.
fn valid_range(out: usize, extent: usize, offset: usize, stride: usize, pad: usize) -> (usize, usize) {
    let shift = offset as isize - pad as isize;
    let lo = if shift >= 0 {
        0
    } else {
        ((-shift) as usize).div_ceil(stride)
    };
    let last = extent as isize - 1 - shift;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last as usize / stride + 1).min(out);
    (lo.min(hi), hi)
}

pub(crate) struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    f: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

pub(crate) fn geometry<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeometry> {
    let [n, c, h, w] = input.nchw()?;
    let [k, kc, f, f2] = kernel.nchw().map_err(|_| {
        Error::Dimension(format!(
            "kernel shape {:?} must be K x C x F x F (input {:?})",
            kernel.shape(),
            input.shape()
        ))
    })?;
    if kc != c || f != f2 {
        return Err(Error::Dimension(format!(
            "input {:?} incompatible with kernel {:?}",
            input.shape(),
            kernel.shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [k] {
            return Err(Error::Dimension(format!(
                "bias {:?} must have length {k} for kernel {:?}",
                b.shape(),
                kernel.shape()
            )));
        }
    }
    let spec = ConvSpec {
        in_channels: c,
        out_channels: k,
        kernel: f,
        stride,
        padding: pad,
    };
    let (ho, wo) = spec.output_hw(h, w).map_err(|e| match e {
        Error::Config(m) => Error::Dimension(format!("input {:?}: {m}", input.shape())),
        other => other,
    })?;
    Ok(ConvGeometry {
        n,
        c,
        h,
        w,
        k,
        f,
        ho,
        wo,
        stride,
        pad,
    })
}

pub(crate) fn forward<T: Real>(
    g: &ConvGeometry,
    input: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.k * g.ho * g.wo];
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    for n in 0..g.n {
        for k in 0..g.k {
            let o = &mut out[(n * g.k + k) * plane_out..][..plane_out];
            if let Some(b) = bias {
                o.fill(b[k]);
            }
            for c in 0..g.c {
                let x = &input[(n * g.c + c) * plane_in..][..plane_in];
                let wk = &kernel[(k * g.c + c) * g.f * g.f..][..g.f * g.f];
                for m in 0..g.f {
                    let (i_lo, i_hi) = valid_range(g.ho, g.h, m, g.stride, g.pad);
                    for q in 0..g.f {
                        let wv = wk[m * g.f + q];
                        if wv == T::zero() {
                            continue;
                        }
                        let (j_lo, j_hi) = valid_range(g.wo, g.w, q, g.stride, g.pad);
                        for i in i_lo..i_hi {
                            let y = i * g.stride + m - g.pad;
                            let orow = &mut o[i * g.wo..(i + 1) * g.wo];
                            let xrow = &x[y * g.w..(y + 1) * g.w];
                            for j in j_lo..j_hi {
                                orow[j] = orow[j] + wv * xrow[j * g.stride + q - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn backward_input<T: Real>(g: &ConvGeometry, kernel: &[T], grad_out: &[T]) -> Vec<T> {
    let mut gi = vec![T::zero(); g.n * g.c * g.h * g.w];
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    for n in 0..g.n {
        for c in 0..g.c {
            let gx = &mut gi[(n * g.c + c) * plane_in..][..plane_in];
            for k in 0..g.k {
                let go = &grad_out[(n * g.k + k) * plane_out..][..plane_out];
                let wk = &kernel[(k * g.c + c) * g.f * g.f..][..g.f * g.f];
                for m in 0..g.f {
                    let (i_lo, i_hi) = valid_range(g.ho, g.h, m, g.stride, g.pad);
                    for q in 0..g.f {
                        let wv = wk[m * g.f + q];
                        let (j_lo, j_hi) = valid_range(g.wo, g.w, q, g.stride, g.pad);
                        for i in i_lo..i_hi {
                            let y = i * g.stride + m - g.pad;
                            let grow = &go[i * g.wo..(i + 1) * g.wo];
                            let xrow = &mut gx[y * g.w..(y + 1) * g.w];
                            for (j, &gv) in grow.iter().enumerate().take(j_hi).skip(j_lo) {
                                let x = j * g.stride + q - g.pad;
                                xrow[x] = xrow[x] + wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    gi
}

pub(crate) fn backward_kernel<T: Real>(g: &ConvGeometry, input: &[T], grad_out: &[T]) -> Vec<T> {
    let mut gk = vec![T::zero(); g.k * g.c * g.f * g.f];
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    for k in 0..g.k {
        for c in 0..g.c {
            let gw = &mut gk[(k * g.c + c) * g.f * g.f..][..g.f * g.f];
            for m in 0..g.f {
                let (i_lo, i_hi) = valid_range(g.ho, g.h, m, g.stride, g.pad);
                for q in 0..g.f {
                    let (j_lo, j_hi) = valid_range(g.wo, g.w, q, g.stride, g.pad);
                    let mut acc = T::zero();
                    for n in 0..g.n {
                        let go = &grad_out[(n * g.k + k) * plane_out..][..plane_out];
                        let x = &input[(n * g.c + c) * plane_in..][..plane_in];
                        for i in i_lo..i_hi {
                            let y = i * g.stride + m - g.pad;
                            let grow = &go[i * g.wo..(i + 1) * g.wo];
                            let xrow = &x[y * g.w..(y + 1) * g.w];
                            for j in j_lo..j_hi {
                                acc = acc + grow[j] * xrow[j * g.stride + q - g.pad];
                            }
                        }
                    }
                    gw[m * g.f + q] = acc;
                }
            }
        }
    }
    gk
}

pub(crate) fn backward_bias<T: Real>(g: &ConvGeometry, grad_out: &[T]) -> Vec<T> {
    let plane_out = g.ho * g.wo;
    let mut gb = vec![T::zero(); g.k];
    for n in 0..g.n {
        for (k, b) in gb.iter_mut().enumerate() {
            let go = &grad_out[(n * g.k + k) * plane_out..][..plane_out];
            *b = *b + go.iter().copied().sum::<T>();
        }
    }
    gb
}

pub(crate) fn output_shape(g: &ConvGeometry) -> [usize; 4] {
    [g.n, g.k, g.ho, g.wo]
}

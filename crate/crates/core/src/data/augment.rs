use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sample::Sample;
use crate::mask::Mask;
use crate::seed;
use crate::tensor::Tensor;

/// Random geometric transforms applied identically to image and mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationPolicy {
    pub hflip: f64,
    pub vflip: f64,
    /// Rotation drawn uniformly from `±max_rotation_deg`.
    pub max_rotation_deg: f64,
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            hflip: 0.5,
            vflip: 0.5,
            max_rotation_deg: 15.0,
            seed: 0,
        }
    }
}

impl AugmentationPolicy {
    pub fn identity() -> Self {
        Self {
            hflip: 0.0,
            vflip: 0.0,
            max_rotation_deg: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Transform {
    hflip: bool,
    vflip: bool,
    angle: f64,
}

impl Transform {
    fn draw(policy: &AugmentationPolicy, epoch: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(&[policy.seed, epoch, index]));
        // Always three draws so the stream does not depend on the policy.
        let h: f64 = rng.gen();
        let v: f64 = rng.gen();
        let a: f64 = rng.gen();
        Self {
            hflip: h < policy.hflip,
            vflip: v < policy.vflip,
            angle: (2.0 * a - 1.0) * policy.max_rotation_deg.to_radians(),
        }
    }

    /// Source coordinates of output pixel `(y, x)`.
    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> (f64, f64) {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        let (s, c) = self.angle.sin_cos();
        // Inverse rotation, then undo the flips.
        let mut sy = c * dy - s * dx + cy;
        let mut sx = s * dy + c * dx + cx;
        if self.vflip {
            sy = h as f64 - 1.0 - sy;
        }
        if self.hflip {
            sx = w as f64 - 1.0 - sx;
        }
        (sy, sx)
    }
}

fn bilinear(plane: &[f32], h: usize, w: usize, sy: f64, sx: f64) -> f32 {
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = (sy - y0, sx - x0);
    let tap = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy > h as f64 - 1.0 || xx > w as f64 - 1.0 {
            0.0
        } else {
            f64::from(plane[yy as usize * w + xx as usize])
        }
    };
    let mut acc = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let wgt = wy * wx;
            if wgt != 0.0 {
                acc += wgt * tap(y0 + dy, x0 + dx);
            }
        }
    }
    acc as f32
}

/// Flips and rotation drawn from `hash(policy.seed, epoch, index)`. Pixels
/// mapped from outside the frame are 0; the mask is resampled nearest-neighbour.
pub fn augment(sample: &Sample, policy: &AugmentationPolicy, epoch: u64, index: u64) -> Sample {
    let t = Transform::draw(policy, epoch, index);
    if !t.hflip && !t.vflip && t.angle == 0.0 {
        return sample.clone();
    }
    let (h, w) = (sample.mask.height(), sample.mask.width());
    let channels = sample.image.numel() / (h * w);
    let src = sample.image.data();
    let mut img = vec![0f32; channels * h * w];
    let mut mask = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = t.source(y, x, h, w);
            for c in 0..channels {
                let plane = &src[c * h * w..(c + 1) * h * w];
                img[c * h * w + y * w + x] = bilinear(plane, h, w, sy, sx);
            }
            let (ny, nx) = (sy.round(), sx.round());
            if ny >= 0.0 && nx >= 0.0 && ny < h as f64 && nx < w as f64 {
                mask[y * w + x] = u8::from(sample.mask.get(ny as usize, nx as usize));
            }
        }
    }
    Sample {
        image: Tensor::new(sample.image.shape(), img).expect("same shape"),
        mask: Mask::new(h, w, mask).expect("binary by construction"),
        label: sample.label,
        source: sample.source.clone(),
    }
}

//! Signed truncated distance maps and their class quantisation.
//!
//! `Dist(i) = δ(i) · min(min_j ‖i − j‖, d)` where `j` ranges over boundary
//! pixels (foreground pixels with at least one 8-adjacent background pixel)
//! and `δ(i)` is `+1` inside the mask, `−1` outside. Boundary pixels sit at
//! distance 0 and count as inside. Masks without a boundary (empty or full)
//! are `±d` everywhere.

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::mask::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DistanceMapConfig {
    pub threshold: usize,
}

impl Default for DistanceMapConfig {
    fn default() -> Self {
        Self { threshold: 5 }
    }
}

impl DistanceMapConfig {
    pub fn new(threshold: usize) -> Result<Self> {
        if threshold == 0 {
            return Err(Error::Config("distance threshold must be at least 1".into()));
        }
        Ok(Self { threshold })
    }

    pub fn num_classes(&self) -> usize {
        2 * self.threshold + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceClassMap {
    pub height: usize,
    pub width: usize,
    pub threshold: usize,
    /// Signed distances in `[−d, d]`.
    pub real: Vec<f64>,
    /// `round(real) + d`, in `[0, 2d]`.
    pub classes: Vec<u16>,
}

impl DistanceClassMap {
    pub fn num_classes(&self) -> usize {
        2 * self.threshold + 1
    }

    /// One-hot targets, `K × H × W` row-major.
    pub fn one_hot(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.num_classes() * plane];
        for (p, &c) in self.classes.iter().enumerate() {
            out[c as usize * plane + p] = 1.0;
        }
        out
    }

    /// 16-bit grayscale rendering: `class × 255 / (K − 1)`.
    pub fn to_image(&self) -> ImageBuffer<Luma<u16>, Vec<u16>> {
        let scale = 255.0 / (self.num_classes() - 1) as f64;
        let data = self
            .classes
            .iter()
            .map(|&c| (f64::from(c) * scale).round() as u16)
            .collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, data).expect("buffer size")
    }
}

/// Foreground pixels with an 8-adjacent background pixel inside the frame.
pub fn boundary(mask: &Mask) -> Vec<bool> {
    let (h, w) = (mask.height(), mask.width());
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            'scan: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    if !mask.get(ny as usize, nx as usize) {
                        out[y * w + x] = true;
                        break 'scan;
                    }
                }
            }
        }
    }
    out
}

const FAR: i64 = i64::MAX / 4;

/// Exact squared Euclidean distance from every pixel to the nearest `true`
/// site (separable lower-envelope transform, integer arithmetic). Pixels
/// with no site at all get `None`.
pub fn squared_edt(sites: &[bool], height: usize, width: usize) -> Vec<Option<i64>> {
    // Columns: 1-D distance to the nearest site in the same column.
    let mut col = vec![FAR; height * width];
    for x in 0..width {
        let mut last: Option<usize> = None;
        for y in 0..height {
            if sites[y * width + x] {
                last = Some(y);
            }
            if let Some(l) = last {
                col[y * width + x] = (y - l) as i64;
            }
        }
        let mut next: Option<usize> = None;
        for y in (0..height).rev() {
            if sites[y * width + x] {
                next = Some(y);
            }
            if let Some(n) = next {
                let d = (n - y) as i64;
                if d < col[y * width + x] {
                    col[y * width + x] = d;
                }
            }
        }
    }
    // Rows: lower envelope of parabolas (x − q)² + col(q)².
    let mut out = vec![None; height * width];
    let mut v = vec![0usize; width];
    // Envelope boundaries as exact fractions num/den.
    let mut z_num = vec![0i64; width + 1];
    let mut z_den = vec![1i64; width + 1];
    for y in 0..height {
        let f = |q: usize| {
            let c = col[y * width + q];
            if c == FAR {
                None
            } else {
                Some(c * c)
            }
        };
        let mut k: isize = -1;
        for q in 0..width {
            let Some(fq) = f(q) else { continue };
            loop {
                if k < 0 {
                    k = 0;
                    v[0] = q;
                    break;
                }
                let p = v[k as usize];
                let fp = f(p).expect("envelope holds finite sites");
                // Intersection s = ((fq + q²) − (fp + p²)) / (2q − 2p).
                let s_num = (fq + (q * q) as i64) - (fp + (p * p) as i64);
                let s_den = 2 * (q as i64 - p as i64);
                let kz = k as usize;
                if k > 0 && s_num * z_den[kz] <= z_num[kz] * s_den {
                    k -= 1;
                    continue;
                }
                k += 1;
                let kz = k as usize;
                v[kz] = q;
                z_num[kz] = s_num;
                z_den[kz] = s_den;
                break;
            }
        }
        if k < 0 {
            continue;
        }
        let mut j = 0usize;
        for q in 0..width {
            while j < k as usize && z_num[j + 1] < (q as i64) * z_den[j + 1] {
                j += 1;
            }
            let p = v[j];
            let dx = q as i64 - p as i64;
            out[y * width + q] = Some(dx * dx + f(p).expect("finite"));
        }
    }
    out
}

/// Signed truncated distance map of `mask`.
pub fn distance_map(mask: &Mask, config: DistanceMapConfig) -> DistanceClassMap {
    let (h, w) = (mask.height(), mask.width());
    let d = config.threshold as f64;
    let sq = squared_edt(&boundary(mask), h, w);
    let real: Vec<f64> = sq
        .iter()
        .zip(mask.data())
        .map(|(s, &m)| {
            let mag = match s {
                Some(s) => (*s as f64).sqrt().min(d),
                None => d,
            };
            if m == 1 {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let classes = real
        .iter()
        .map(|&r| (r.round() + d) as u16)
        .collect();
    DistanceClassMap {
        height: h,
        width: w,
        threshold: config.threshold,
        real,
        classes,
    }
}

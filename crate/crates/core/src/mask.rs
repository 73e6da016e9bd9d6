use crate::error::{Error, Result};

/// Binary H×W mask, values strictly 0 or 1, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some((idx, &v)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::Data(format!(
                "mask value {v} at ({}, {}) is not binary",
                idx / width,
                idx % width
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// Pixelwise OR.
    pub fn union(&self, other: &Mask) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Dimension(format!(
                "mask union of {}x{} and {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a | b).collect(),
        })
    }

    /// Thresholds probabilities: `p > threshold` is foreground, ties are background.
    pub fn from_probabilities<T: num_traits::Float>(
        height: usize,
        width: usize,
        probs: &[T],
        threshold: T,
    ) -> Result<Self> {
        let data = probs.iter().map(|&p| u8::from(p > threshold)).collect();
        Self::new(height, width, data)
    }
}

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Everything that determines the network graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of resolution levels `L`; nodes are `x^{i,j}` with `i + j < L`.
    pub depth: usize,
    /// Channels at level 0; level `i` has `base_channels * 2^i`.
    pub base_channels: usize,
    pub input_channels: usize,
    /// Square working resolution; must be divisible by `2^(depth-1)`.
    pub image_size: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub spatial_kernel: usize,
    /// Distance clamp `d`; the distance head predicts `2d + 1` classes.
    pub distance_threshold: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 5,
            base_channels: 16,
            input_channels: 1,
            image_size: 128,
            lstm_hidden: 16,
            lstm_layers: 2,
            spatial_kernel: 7,
            distance_threshold: 5,
            dropout: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.depth < 2 {
            return fail(format!("depth {} must be at least 2", self.depth));
        }
        if self.base_channels == 0 || self.input_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.lstm_hidden == 0 || self.lstm_layers == 0 {
            return fail("lstm hidden size and layer count must be positive".into());
        }
        if self.spatial_kernel.is_multiple_of(2) {
            return fail(format!("spatial kernel {} must be odd", self.spatial_kernel));
        }
        if self.distance_threshold == 0 {
            return fail("distance threshold must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        let factor = 1usize << (self.depth - 1);
        if self.image_size == 0 || !self.image_size.is_multiple_of(factor) {
            return fail(format!(
                "image size {} must be a positive multiple of 2^(depth-1) = {factor}",
                self.image_size
            ));
        }
        Ok(())
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Channels entering the attention block: one base-width map per top-row node.
    pub fn fused_channels(&self) -> usize {
        (self.depth - 1) * self.base_channels
    }

    pub fn num_classes(&self) -> usize {
        2 * self.distance_threshold + 1
    }

    pub fn node_count(&self) -> usize {
        self.depth * (self.depth + 1) / 2
    }

    /// Stable `key=value` rendering used for hashing.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "depth={}", self.depth);
        let _ = writeln!(s, "base_channels={}", self.base_channels);
        let _ = writeln!(s, "input_channels={}", self.input_channels);
        let _ = writeln!(s, "image_size={}", self.image_size);
        let _ = writeln!(s, "lstm_hidden={}", self.lstm_hidden);
        let _ = writeln!(s, "lstm_layers={}", self.lstm_layers);
        let _ = writeln!(s, "spatial_kernel={}", self.spatial_kernel);
        let _ = writeln!(s, "distance_threshold={}", self.distance_threshold);
        let _ = writeln!(s, "dropout={:?}", self.dropout);
        s
    }

    pub fn hash(&self) -> u64 {
        fnv1a64(self.canonical().as_bytes())
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

//! Channel-then-spatial attention over the fused top-row maps, and the two
//! output heads.
//!
//! ```text
//! M_c(F) = σ(P(lstm(lstm(avg_hw F))) + P(lstm(lstm(max_hw F))))      C×1×1
//! M_s(F) = σ(conv7x7([mean_c F; max_c F]))                          1×H×W
//! F'  = M_c(F) ⊗ F
//! F'' = M_s(F') ⊗ F'
//! ```
//!
//! Each channel descriptor is scanned as a length-C sequence of scalars by a
//! stacked LSTM shared between the two branches. `P` projects the hidden
//! state at channel position `c` to one scalar with its own row of a `C×m`
//! weight matrix.

use crate::autodiff::{ConvSpec, Tape, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, Init, LstmCell, ParamId, ParamStore};
use crate::tensor::Real;

/// Per-channel spatial mean and max, each `N×C×1×1`.
pub fn channel_descriptors<T: Real>(tape: &mut Tape<T>, features: Var) -> Result<(Var, Var)> {
    tape.value(features).nchw()?;
    let avg = tape.mean_axes(features, 2, 4)?;
    let max = tape.max_axes(features, 2, 4)?;
    Ok((avg, max))
}

#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub channels: usize,
    pub layers: Vec<LstmCell>,
    /// `C × m` per-position projection weights.
    pub proj_weight: ParamId,
    /// Length-`C` projection bias.
    pub proj_bias: ParamId,
}

impl ChannelAttention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        hidden: usize,
        layers: usize,
    ) -> Result<Self> {
        let mut cells = Vec::with_capacity(layers);
        for l in 0..layers {
            let input = if l == 0 { 1 } else { hidden };
            cells.push(LstmCell::new(store, &format!("{name}.lstm{l}"), input, hidden)?);
        }
        let bound = 1.0 / (hidden as f64).sqrt();
        let proj_weight = store.register(&format!("{name}.proj.weight"), &[channels, hidden], Init::Uniform(bound))?;
        let proj_bias = store.register(&format!("{name}.proj.bias"), &[channels], Init::Constant(0.0))?;
        Ok(Self {
            channels,
            layers: cells,
            proj_weight,
            proj_bias,
        })
    }

    fn hidden(&self) -> usize {
        self.layers[0].hidden_size
    }

    /// One branch: `N×C×1×1` descriptor to `N×C` pre-activation scores.
    fn branch<T: Real>(&self, tape: &mut Tape<T>, params: &Bound, desc: Var) -> Result<Var> {
        let n = tape.shape(desc)[0];
        let c = self.channels;
        let seq = tape.reshape(desc, &[n, c])?;
        let mut xs = Vec::with_capacity(c);
        for t in 0..c {
            xs.push(tape.slice(seq, 1, t, 1)?);
        }
        for cell in &self.layers {
            xs = cell.sequence(tape, params, &xs)?;
        }
        let m = self.hidden();
        let mut rows = Vec::with_capacity(c);
        for h in xs {
            rows.push(tape.reshape(h, &[n, 1, m])?);
        }
        let stacked = tape.concat(&rows, 1)?;
        let weighted = tape.mul(stacked, params.var(self.proj_weight))?;
        let scores = tape.sum_axes(weighted, 2, 3)?;
        let scores = tape.reshape(scores, &[n, c])?;
        tape.add(scores, params.var(self.proj_bias))
    }

    /// Channel attention map `M_c`, shape `N×C×1×1`, values in (0, 1).
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &Bound, features: Var) -> Result<Var> {
        let [n, c, _, _] = tape.value(features).nchw()?;
        if c != self.channels {
            return Err(Error::Dimension(format!(
                "channel attention built for {} channels, got {:?}",
                self.channels,
                tape.shape(features)
            )));
        }
        let (avg, max) = channel_descriptors(tape, features)?;
        let a = self.branch(tape, params, avg)?;
        let b = self.branch(tape, params, max)?;
        let s = tape.add(a, b)?;
        let s = tape.sigmoid(s);
        tape.reshape(s, &[n, c, 1, 1])
    }
}

#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub conv: Conv2d,
}

impl SpatialAttention {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, kernel: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), ConvSpec::same(2, 1, kernel))?,
        })
    }

    /// Spatial attention map `M_s`, shape `N×1×H×W`, values in (0, 1).
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &Bound, features: Var) -> Result<Var> {
        tape.value(features).nchw()?;
        let mean = tape.mean_axes(features, 1, 2)?;
        let max = tape.max_axes(features, 1, 2)?;
        let pooled = tape.concat_channels(&[mean, max])?;
        let s = self.conv.forward(tape, params, pooled)?;
        Ok(tape.sigmoid(s))
    }
}

#[derive(Clone, Debug)]
pub struct Cbam {
    pub channel: ChannelAttention,
    pub spatial: SpatialAttention,
}

#[derive(Clone, Copy, Debug)]
pub struct CbamOutput {
    pub refined: Var,
    pub channel_map: Var,
    pub spatial_map: Var,
}

impl Cbam {
    pub fn new<T: Real>(store: &mut ParamStore<T>, config: &ModelConfig) -> Result<Self> {
        Ok(Self {
            channel: ChannelAttention::new(
                store,
                "attention.channel",
                config.fused_channels(),
                config.lstm_hidden,
                config.lstm_layers,
            )?,
            spatial: SpatialAttention::new(store, "attention.spatial", config.spatial_kernel)?,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &Bound, features: Var) -> Result<CbamOutput> {
        let channel_map = self.channel.forward(tape, params, features)?;
        let f1 = tape.mul(features, channel_map)?;
        let spatial_map = self.spatial.forward(tape, params, f1)?;
        let refined = tape.mul(f1, spatial_map)?;
        Ok(CbamOutput {
            refined,
            channel_map,
            spatial_map,
        })
    }
}

/// 1×1 heads reading the refined feature map.
#[derive(Clone, Debug)]
pub struct FusionHeads {
    pub seg: Conv2d,
    pub dc: Conv2d,
}

impl FusionHeads {
    pub fn new<T: Real>(store: &mut ParamStore<T>, config: &ModelConfig) -> Result<Self> {
        let c = config.fused_channels();
        Ok(Self {
            seg: Conv2d::new(store, "head.seg", ConvSpec::same(c, 1, 1))?,
            dc: Conv2d::new(store, "head.dc", ConvSpec::same(c, config.num_classes(), 1))?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    pub fused: Var,
    pub cbam: CbamOutput,
    /// `N×1×H×W`.
    pub seg_logits: Var,
    /// `N×K×H×W`.
    pub dc_logits: Var,
}

/// Concatenates the top-row maps, refines them with attention and applies
/// both heads.
pub fn fuse<T: Real>(
    tape: &mut Tape<T>,
    params: &Bound,
    maps: &[Var],
    expected_maps: usize,
    cbam: &Cbam,
    heads: &FusionHeads,
) -> Result<FusionOutput> {
    if maps.len() != expected_maps {
        return Err(Error::Usage(format!(
            "fusion expects {expected_maps} top-row maps, got {}",
            maps.len()
        )));
    }
    let first = tape.shape(maps[0]).to_vec();
    for &m in &maps[1..] {
        if tape.shape(m) != first.as_slice() {
            return Err(Error::Dimension(format!(
                "top-row maps disagree: {first:?} vs {:?}",
                tape.shape(m)
            )));
        }
    }
    let fused = tape.concat_channels(maps)?;
    let out = cbam.forward(tape, params, fused)?;
    let seg_logits = heads.seg.forward(tape, params, out.refined)?;
    let dc_logits = heads.dc.forward(tape, params, out.refined)?;
    Ok(FusionOutput {
        fused,
        cbam: out,
        seg_logits,
        dc_logits,
    })
}

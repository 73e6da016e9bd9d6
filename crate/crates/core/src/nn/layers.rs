use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Activation, ConvSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::params::{Bound, Init, ParamId, ParamStore};
use crate::seed;
use crate::tensor::{Real, Tensor};

/// Train/eval switch plus the seed dropout masks derive from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardMode {
    pub training: bool,
    pub seed: u64,
}

impl ForwardMode {
    pub fn eval() -> Self {
        Self {
            training: false,
            seed: 0,
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            training: true,
            seed,
        }
    }
}

/// Inverted dropout. In training each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; evaluation is the
/// identity. The mask is drawn from `(seed, per-tape call counter)`.
pub fn dropout<T: Real>(tape: &mut Tape<T>, input: Var, rate: f64, mode: ForwardMode) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} must be in [0, 1)")));
    }
    let call = tape.next_dropout_call();
    if !mode.training || rate == 0.0 {
        return Ok(input);
    }
    let mask = dropout_mask::<T>(tape.shape(input), rate, seed::derive(&[mode.seed, call]));
    let m = tape.constant(mask);
    tape.mul(input, m)
}

fn dropout_mask<T: Real>(shape: &[usize], rate: f64, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = T::lit(1.0 / (1.0 - rate));
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    Tensor::new(shape, data).expect("mask shape")
}

/// Convolution with learnable kernel and bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv2d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
        let weight = store.register(
            &format!("{name}.weight"),
            &spec.kernel_shape(),
            Init::HeUniform { fan_in },
        )?;
        let bias = store.register(&format!("{name}.bias"), &[spec.out_channels], Init::Constant(0.0))?;
        Ok(Self { spec, weight, bias })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(
            x,
            params.var(self.weight),
            Some(params.var(self.bias)),
            self.spec.stride,
            self.spec.padding,
        )
    }
}

/// Convolution followed by an activation and optional dropout.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub activation: Activation,
    pub dropout: Option<f64>,
}

impl ConvBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        activation: Activation,
        dropout: Option<f64>,
    ) -> Result<Self> {
        if let Some(r) = dropout {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("dropout rate {r} must be in [0, 1)")));
            }
        }
        Ok(Self {
            conv: Conv2d::new(store, name, spec)?,
            activation,
            dropout,
        })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        x: Var,
        mode: ForwardMode,
    ) -> Result<Var> {
        let y = self.conv.forward(tape, params, x)?;
        let y = tape.activation(y, self.activation);
        match self.dropout {
            Some(rate) => dropout(tape, y, rate, mode),
            None => Ok(y),
        }
    }
}

/// Affine map `W x + b` with `W` of shape `out × in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        bound: f64,
    ) -> Result<Self> {
        let weight = store.register(&format!("{name}.weight"), &[outputs, inputs], Init::Uniform(bound))?;
        let bias = store.register(&format!("{name}.bias"), &[outputs], Init::Constant(0.0))?;
        Ok(Self { weight, bias })
    }

    /// `x` is `N × in`; returns `N × out`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, params.var(self.weight), Some(params.var(self.bias)))
    }
}

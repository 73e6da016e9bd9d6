//! LSTM cell:
//!
//! ```text
//! f = σ(W_f x + U_f h + b_f)      i = σ(W_i x + U_i h + b_i)
//! o = σ(W_o x + U_o h + b_o)      c' = f ⊙ c + i ⊙ τ(W_c x + U_c h + b_c)
//! h' = o ⊙ τ(c')
//! ```
//!
//! Inputs and states are batched row vectors (`N × n`, `N × m`).

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Gate order used for parameter arrays: forget, input, output, candidate.
pub const GATES: [&str; 4] = ["f", "i", "o", "c"];

#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_size: usize,
    pub hidden_size: usize,
    /// Input weights, each `m × n`.
    pub w: [ParamId; 4],
    /// Recurrent weights, each `m × m`.
    pub u: [ParamId; 4],
    /// Biases, each of length `m`.
    pub b: [ParamId; 4],
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros<T: Real>(tape: &mut Tape<T>, batch: usize, hidden: usize) -> Self {
        Self {
            h: tape.constant(Tensor::zeros(&[batch, hidden])),
            c: tape.constant(Tensor::zeros(&[batch, hidden])),
        }
    }
}

impl LstmCell {
    /// Weights uniform in `±1/sqrt(m)`, forget bias 1, other biases 0.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input_size: usize,
        hidden_size: usize,
    ) -> Result<Self> {
        if input_size == 0 || hidden_size == 0 {
            return Err(Error::Config(format!(
                "lstm {name}: sizes must be positive (n={input_size}, m={hidden_size})"
            )));
        }
        let bound = 1.0 / (hidden_size as f64).sqrt();
        let mut reg = |kind: &str, gate: &str, shape: &[usize], init: Init| {
            store.register(&format!("{name}.{kind}_{gate}"), shape, init)
        };
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for gate in GATES {
            w.push(reg("w", gate, &[hidden_size, input_size], Init::Uniform(bound))?);
            u.push(reg("u", gate, &[hidden_size, hidden_size], Init::Uniform(bound))?);
            let bias = if gate == "f" { 1.0 } else { 0.0 };
            b.push(reg("b", gate, &[hidden_size], Init::Constant(bias))?);
        }
        Ok(Self {
            input_size,
            hidden_size,
            w: w.try_into().expect("four gates"),
            u: u.try_into().expect("four gates"),
            b: b.try_into().expect("four gates"),
        })
    }

    fn gate<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        g: usize,
        x: Var,
        h: Var,
    ) -> Result<Var> {
        let wx = tape.linear(x, params.var(self.w[g]), Some(params.var(self.b[g])))?;
        let uh = tape.linear(h, params.var(self.u[g]), None)?;
        tape.add(wx, uh)
    }

    pub fn step<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        x: Var,
        prev: LstmState,
    ) -> Result<LstmState> {
        let xs = tape.shape(x);
        if xs.len() != 2 || xs[1] != self.input_size {
            return Err(Error::Dimension(format!(
                "lstm input {:?} must be N x {}",
                xs, self.input_size
            )));
        }
        let n = xs[0];
        for s in [prev.h, prev.c] {
            if tape.shape(s) != [n, self.hidden_size] {
                return Err(Error::Dimension(format!(
                    "lstm state {:?} must be {n} x {}",
                    tape.shape(s),
                    self.hidden_size
                )));
            }
        }
        let f = self.gate(tape, params, 0, x, prev.h)?;
        let f = tape.sigmoid(f);
        let i = self.gate(tape, params, 1, x, prev.h)?;
        let i = tape.sigmoid(i);
        let o = self.gate(tape, params, 2, x, prev.h)?;
        let o = tape.sigmoid(o);
        let cand = self.gate(tape, params, 3, x, prev.h)?;
        let cand = tape.tanh(cand);
        let keep = tape.mul(f, prev.c)?;
        let write = tape.mul(i, cand)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// Unrolls the cell from a zero state; returns every hidden state.
    pub fn sequence<T: Real>(&self, tape: &mut Tape<T>, params: &Bound, xs: &[Var]) -> Result<Vec<Var>> {
        let Some(&first) = xs.first() else {
            return Err(Error::Usage("lstm sequence must be non-empty".into()));
        };
        let n = tape.shape(first)[0];
        let mut state = LstmState::zeros(tape, n, self.hidden_size);
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            state = self.step(tape, params, x, state)?;
            out.push(state.h);
        }
        Ok(out)
    }
}

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam. Moments are created lazily on the first step.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over a list of parameters and matching gradients.
    /// A missing gradient counts as zero.
    pub fn step_tensors(&mut self, params: &mut [&mut Tensor<T>], grads: &[Option<&Tensor<T>>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[k].shape() {
                return Err(Error::Dimension(format!(
                    "parameter {k}: shape {:?} vs optimizer state {:?}",
                    p.shape(),
                    self.m[k].shape()
                )));
            }
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(Error::Dimension(format!(
                        "parameter {k}: gradient {:?} vs value {:?}",
                        g.shape(),
                        p.shape()
                    )));
                }
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let pd = p.data_mut();
            for i in 0..pd.len() {
                let gi = g.map_or(0.0, |g| g.data()[i].to_f64_lossy());
                let mi = beta1 * m[i].to_f64_lossy() + (1.0 - beta1) * gi;
                let vi = beta2 * v[i].to_f64_lossy() + (1.0 - beta2) * gi * gi;
                m[i] = T::lit(mi);
                v[i] = T::lit(vi);
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                pd[i] = T::lit(pd[i].to_f64_lossy() - update);
            }
        }
        Ok(())
    }

    /// Applies the accumulated gradients held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        let grads: Vec<Option<Tensor<T>>> = store.iter().map(|(_, p)| p.grad.clone()).collect();
        let grad_refs: Vec<Option<&Tensor<T>>> = grads.iter().map(Option::as_ref).collect();
        let mut values: Vec<&mut Tensor<T>> = store.iter_mut().map(|p| &mut p.value).collect();
        self.step_tensors(&mut values, &grad_refs)
    }
}

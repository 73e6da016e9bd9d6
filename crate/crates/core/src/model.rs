use crate::attention::{fuse, Cbam, FusionHeads, FusionOutput};
use crate::autodiff::{Tape, Var};
use crate::backbone::{Backbone, BackboneOutput};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::loss::LossParams;
use crate::nn::{Bound, ForwardMode, ParamStore};
use crate::tensor::{Real, Tensor};

/// Backbone, attention fusion, heads and loss weights for one [`ModelConfig`].
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub cbam: Cbam,
    pub heads: FusionHeads,
    pub loss: LossParams,
}

#[derive(Clone, Debug)]
pub struct NetworkOutput {
    pub backbone: BackboneOutput,
    pub fusion: FusionOutput,
}

impl NetworkOutput {
    pub fn seg_logits(&self) -> Var {
        self.fusion.seg_logits
    }

    pub fn dc_logits(&self) -> Var {
        self.fusion.dc_logits
    }
}

impl Network {
    /// Builds the graph and draws initial parameters from `seed`.
    pub fn build<T: Real>(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut store = ParamStore::new(seed);
        let backbone = Backbone::build(config, &mut store)?;
        let cbam = Cbam::new(&mut store, config)?;
        let heads = FusionHeads::new(&mut store, config)?;
        let loss = LossParams::new(&mut store)?;
        Ok((
            Self {
                config: config.clone(),
                backbone,
                cbam,
                heads,
                loss,
            },
            store,
        ))
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        input: Var,
        mode: ForwardMode,
    ) -> Result<NetworkOutput> {
        let backbone = self.backbone.forward(tape, params, input, mode)?;
        let fusion = fuse(
            tape,
            params,
            &backbone.top,
            self.config.depth - 1,
            &self.cbam,
            &self.heads,
        )?;
        Ok(NetworkOutput { backbone, fusion })
    }

    /// Eval-mode foreground probabilities `σ(logit / σ_seg²)`, shape `N×1×H×W`.
    pub fn predict_proba<T: Real>(&self, store: &ParamStore<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let x = tape.constant(images.clone());
        let out = self.forward(&mut tape, &params, x, ForwardMode::eval())?;
        let z = self.loss.tempered_seg_logits(&mut tape, &params, out.seg_logits())?;
        let p = tape.sigmoid(z);
        Ok(tape.value(p).clone())
    }
}

use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::data::Sample;
use crate::distance::{distance_map, DistanceClassMap, DistanceMapConfig};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::metrics::{confusion, ConfusionCounts};
use crate::model::Network;
use crate::nn::{Bound, ForwardMode, ParamStore};
use crate::seed;
use crate::tensor::Tensor;

use super::optim::{Adam, AdamConfig};

/// Stacked images with their masks and distance-class targets.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub masks: Vec<Mask>,
    pub targets: Vec<DistanceClassMap>,
}

impl Batch {
    pub fn new(samples: &[&Sample], threshold: usize) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Usage("empty batch".into()))?;
        let shape = first.image.shape().to_vec();
        let mut data = Vec::with_capacity(samples.len() * first.image.numel());
        for s in samples {
            if s.image.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "batch mixes images {:?} and {:?}",
                    shape,
                    s.image.shape()
                )));
            }
            data.extend_from_slice(s.image.data());
        }
        let mut full = vec![samples.len()];
        full.extend_from_slice(&shape);
        let cfg = DistanceMapConfig::new(threshold)?;
        Ok(Self {
            images: Tensor::new(&full, data)?,
            masks: samples.iter().map(|s| s.mask.clone()).collect(),
            targets: samples.iter().map(|s| distance_map(&s.mask, cfg)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Total loss and segmentation logits for one batch.
pub fn batch_loss(
    network: &Network,
    tape: &mut Tape<f32>,
    params: &Bound,
    batch: &Batch,
    mode: ForwardMode,
) -> Result<(Var, Var)> {
    let x = tape.constant(batch.images.clone());
    let out = network.forward(tape, params, x, mode)?;
    let seg = network.loss.seg_loss(tape, params, out.seg_logits(), &batch.masks)?;
    let dc = network.loss.dc_loss(tape, params, out.dc_logits(), &batch.targets)?;
    let total = network.loss.total(tape, params, seg, dc)?;
    Ok((total, out.seg_logits()))
}

/// Network, parameters and optimiser state of one run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub network: Network,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub step: u64,
    pub seed: u64,
}

impl Trainer {
    pub fn new(model: &ModelConfig, seed: u64, adam: AdamConfig) -> Result<Self> {
        let (network, store) = Network::build::<f32>(model, seed::derive(&[seed, 0x1417]))?;
        Ok(Self {
            network,
            store,
            adam: Adam::new(adam),
            step: 0,
            seed,
        })
    }

    /// Forward, backward and one Adam update. Returns the batch loss.
    pub fn train_step(&mut self, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape);
        let mode = ForwardMode::train(seed::derive(&[self.seed, 0xd20, self.step]));
        let (loss, _) = batch_loss(&self.network, &mut tape, &params, batch, mode)?;
        let value = f64::from(tape.value(loss).data()[0]);
        if !value.is_finite() {
            return Err(Error::Numerical {
                step: self.step,
                message: format!("loss is {value}"),
            });
        }
        let mut grads = tape.backward(loss)?;
        self.store.zero_grads();
        self.store.accumulate_grads(&params, &mut grads);
        self.adam.step(&mut self.store)?;
        self.step += 1;
        Ok(value)
    }
}

/// Eval-mode loss and per-sample confusion counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Sample-weighted mean of the batch losses.
    pub loss: f64,
    pub counts: Vec<ConfusionCounts>,
}

impl Evaluation {
    pub fn pooled(&self) -> ConfusionCounts {
        self.counts.iter().copied().fold(ConfusionCounts::default(), |a, b| a + b)
    }
}

pub fn evaluate_samples(
    network: &Network,
    store: &ParamStore<f32>,
    samples: &[Sample],
    batch_size: usize,
    threshold: f32,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let mut loss_sum = 0.0;
    let mut counts = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = Batch::new(&refs, network.config.distance_threshold)?;
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let (loss, logits) = batch_loss(network, &mut tape, &params, &batch, ForwardMode::eval())?;
        loss_sum += f64::from(tape.value(loss).data()[0]) * chunk.len() as f64;
        let z = network.loss.tempered_seg_logits(&mut tape, &params, logits)?;
        let p = tape.sigmoid(z);
        let probs = tape.value(p);
        let plane = batch.masks[0].height() * batch.masks[0].width();
        for (b, gt) in batch.masks.iter().enumerate() {
            let pred = Mask::from_probabilities(
                gt.height(),
                gt.width(),
                &probs.data()[b * plane..(b + 1) * plane],
                threshold,
            )?;
            counts.push(confusion(&pred, gt)?);
        }
    }
    Ok(Evaluation {
        loss: loss_sum / samples.len() as f64,
        counts,
    })
}

//! Optimisation, checkpoints and the training/evaluation loops.

mod checkpoint;
mod optim;
mod run;
mod settings;
mod trainer;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use optim::{Adam, AdamConfig};
pub use trainer::{batch_loss, evaluate_samples, Batch, Evaluation, Trainer};
pub use run::{
    evaluate, load_dataset, make_distance_maps, new_trainer, predict, restore_network, score_masks, split_samples,
    train, CurveRow, EvalReport, Prediction, TrainSummary, CURVES_HEADER,
};
pub use settings::{RunConfig, DATA_ROOT_ENV};

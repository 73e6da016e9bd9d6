//! Nested UNet++ breast-ultrasound segmentation with LSTM channel attention,
//! spatial attention and a signed distance-class auxiliary task, built on a
//! small reverse-mode autodiff core.

pub mod attention;
pub mod autodiff;
pub mod backbone;
pub mod config;
pub mod data;
pub mod distance;
pub mod error;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod seed;
pub mod tensor;
pub mod train;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use mask::Mask;
pub use model::Network;
pub use tensor::{Real, Tensor};

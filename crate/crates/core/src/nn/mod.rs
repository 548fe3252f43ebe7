//! Small 2-D CNN regression engine: forward, backprop, Adam, MSE and JSON
//! serialization, in 64-bit floats.

mod adam;
mod layers;
mod metrics;
mod model;
mod tensor;
mod train;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layers::{elu, elu_grad, Activation, Conv2d, Dense, ELU_ALPHA};
pub use metrics::{regression_metrics, RegressionMetrics};
pub use model::{
    backward, forward, forward_tensor, Architecture, CnnModel, Gradients, LayerBuffers, Workspace,
    MODEL_FORMAT_VERSION,
};
pub use tensor::Tensor;
pub use train::{fit, mse, EpochRecord, Example, FitConfig, PlateauConfig, ReduceOnPlateau};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{what} version mismatch: found {found}, expected {expected}")]
    Version { what: &'static str, found: u32, expected: u32 },
    #[error("non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("empty {0}")]
    EmptyData(&'static str),
    #[error("bad training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

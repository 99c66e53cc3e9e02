//! Minimal CPU neural-network kernel: NCHW tensors, convolution, batch
//! normalization, leaky ReLU, residual blocks, MSE loss, reverse-mode
//! gradients, Adam and checkpoint serialization.

pub mod adam;
pub mod checkpoint;
pub mod gemm;
pub mod layers;
pub mod loss;
pub mod network;
pub mod tensor;

pub use adam::AdamState;
pub use checkpoint::{ArchRecord, Checkpoint, CheckpointError};
pub use layers::{ConvSpec, Layer, LayerSpec, Mode, ParamRef};
pub use loss::mse_loss;
pub use network::Network;
pub use tensor::{Scalar, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("state error: {0}")]
    State(&'static str),
    #[error("invalid layer configuration: {0}")]
    Config(String),
}

//! Minimal dense-network engine: fully-connected layers, ReLU/ReLU6,
//! batch-norm, exact reverse-mode gradients and Adam.

pub mod adam;
pub mod batchnorm;
pub mod checkpoint;
pub mod layers;
pub mod mlp;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, batchnorm_infer, batchnorm_train, BatchNormParams, Mode};
pub use checkpoint::Checkpoint;
pub use layers::{activation_backward, dense_backward, dense_forward, relu6_forward, relu_forward, Activation, DenseParams};
pub use mlp::{Mlp, MlpArch, MlpCache, MlpGrads};
pub use tensor::Tensor2D;

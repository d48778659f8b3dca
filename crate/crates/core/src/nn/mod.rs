//! Tensor container and the differentiable layer set used by the classifiers.
//!
//! Every primitive exists in two forms: a pure function pair (`conv2d` /
//! `conv2d_backward`, ...) and a [`Layer`] wrapper that owns named parameters
//! and their gradients. Layers do not cache activations; the caller hands the
//! forward input and output back to [`Layer::backward`].

mod activation;
mod batchnorm;
mod concat;
mod conv;
mod dense;
pub mod gradcheck;
mod init;
mod layer;
mod loss;
mod pool;
mod scalar;
mod tensor;

pub use activation::{activate, activate_backward, ActivationKind, ActivationLayer};
pub use batchnorm::{batchnorm, batchnorm_backward, BatchNorm, BatchNormGrads, BN_EPSILON, BN_MOMENTUM};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d, conv2d_backward, Conv2d, ConvGrads};
pub use dense::{dense, dense_backward, Dense, DenseGrads, Flatten};
pub use init::seeded_init;
pub use layer::{Layer, LayerKind, Mode, Param, Sequential, Upsample};
pub use loss::{bce_logit_grad, bce_loss, BCE_EPSILON};
pub use pool::{maxpool2d, maxpool2d_backward, MaxPool2d};
pub use scalar::Scalar;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("channel mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

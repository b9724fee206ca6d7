//! Small, dependency-light building blocks for training convolutional
//! networks on the CPU.
//!
//! Every layer owns its parameters and keeps whatever activations it needs
//! for the backward pass between a training `forward` and the matching
//! `backward`. Inference goes through [`Layer::infer`], which takes `&self`
//! and never touches caches, so a trained network can be shared between
//! threads.
//!
//! Tensors are dense `f32` in NCHW order (or `[N, F]` after pooling).

pub mod activation;
pub mod conv;
pub mod gemm;
pub mod init;
pub mod layer;
pub mod linear;
pub mod norm;
pub mod optim;
pub mod param;
pub mod pool;
pub mod se;
pub mod sequential;
pub mod tensor;

pub use activation::{Act, Activation};
pub use conv::{Conv2d, DepthwiseConv2d};
pub use layer::{Ctx, Layer, LayerDesc, LayerKind};
pub use linear::{Dropout, Linear};
pub use norm::BatchNorm2d;
pub use optim::{Adam, AdamConfig, ParamGroup};
pub use param::Param;
pub use pool::{GlobalAvgPool, MaxPool2d};
pub use se::SqueezeExcite;
pub use sequential::Sequential;
pub use tensor::Tensor;

#[cfg(test)]
mod testutil;

//! Minimal convolutional layer toolkit with explicit backward passes.

mod layers;
mod optim;
mod real;
mod tensor;

pub use layers::{
    relu, relu_backward, uniform, BatchNorm2d, Conv2d, ConvCache, ConvTranspose2d, Mode, NormCache,
    Param, ResBlock, ResCache,
};
pub use optim::{NAdam, NAdamConfig};
pub use real::{matmul, MatRef, Real};
pub use tensor::Tensor4;

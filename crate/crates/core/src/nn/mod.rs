//! Dense-tensor numerical kernel: convolution, ReLU, Sobel, Adam, and a
//! finite-difference gradient checker. All computation is `f64`.

mod activation;
mod adam;
mod conv;
mod gradcheck;
mod sobel;
mod tensor;

pub use activation::{relu, relu_backward};
pub(crate) use activation::{relu_gate, relu_in_place};
pub use adam::{adam_step, AdamConfig, AdamState, ParamBlock};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvParams};
pub(crate) use conv::{backward_accumulate as conv_backward_accumulate, forward_into as conv_forward_into};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use sobel::{sobel_depthwise, sobel_depthwise_backward, SOBEL_X, SOBEL_Y};
pub(crate) use sobel::{sobel_backward_accumulate, sobel_forward_into};
pub use tensor::Tensor3;

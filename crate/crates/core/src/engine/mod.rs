//! Minimal dense-tensor engine: the forward kernels a small transformer needs,
//! their analytic VJPs, and a finite-difference oracle.

mod grad;
mod ops;
mod tensor;

pub use grad::{finite_difference_grad, max_relative_error};
pub use ops::{
    add, add_backward, argmax_rows, cross_entropy, cross_entropy_backward, gelu, gelu_backward,
    gelu_grad_scalar, gelu_scalar, gemm, gemm_backward, layer_norm, layer_norm_backward, mul,
    mul_backward, relu, relu_backward, scale, softmax_rows, softmax_rows_backward, LayerNormCache,
};
pub use tensor::Tensor;

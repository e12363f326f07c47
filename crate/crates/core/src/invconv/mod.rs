//! The masked convolution `y = M x`, its exact inverse `x = M⁻¹ y`, and
//! backpropagation through the inverse.
//!
//! With top-left padding and a kernel whose bottom-right channel block is the
//! identity, `M` is unit lower triangular in pixel-major raster order. The
//! inverse is then a triangular solve that proceeds one anti-diagonal at a
//! time ([`inv_conv_solve`]); the gradient with respect to the solve's input
//! is the transposed solve `Mᵀ u = ∂L/∂x` swept in the opposite direction
//! ([`input_grad`]); and the weight gradient is a shifted correlation of `u`
//! with the solve's output ([`weight_grad`]). All three cost `O(m k²)` sequential
//! steps on an `m × m` image with `O(m)` parallel work per step.
//!
//! [`reference`] keeps direct recursive evaluations of `∂x_q/∂y_p` and
//! `∂x_q/∂W_a` as slow cross-checks; [`stdconv`] is ordinary same-padded
//! convolution with its backward pass, used inside coupling networks.

mod kernel;
mod ops;
pub mod reference;
pub mod stdconv;

pub use kernel::{mask_project, mask_project_in_place, MaskedKernel};
pub use ops::{
    conv_forward, conv_forward_with, input_grad, input_grad_with, inv_conv_backward,
    inv_conv_solve, inv_conv_solve_with, weight_grad, weight_grad_with, ConvGradients,
};
pub use reference::{
    jacobian_entry_recursive, weight_jacobian_recursive, InputJacobianRecursion,
    WeightJacobianRecursion,
};
pub use stdconv::{std_conv_backward, StdConv, StdConvGrads};

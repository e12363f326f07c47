//! Bijective layers. Every layer exposes a density-direction forward pass
//! returning `(y, logdet)`, an exact inverse, and a backward pass for the
//! objective `L(y) − logdet` that accumulates parameter gradients.

mod actnorm;
mod coupling;
mod mix;
mod reshape;
mod spline;

pub use actnorm::{actnorm_backward, actnorm_data_init, actnorm_forward, actnorm_inverse, actnorm_log_scale};
pub use coupling::{CouplingNet, CouplingParams, CouplingWeights};
pub use mix::{inv1x1_backward, inv1x1_forward, inv1x1_inverse, inv1x1_log_abs_det, MIN_ABS_DET};
pub use reshape::{
    concat_channels, split, split_channels, squeeze, standard_normal_log_density, unsplit, unsqueeze,
};
pub use spline::{
    knot, knot_distance, spline_act_backward, spline_act_forward, spline_act_inverse, spline_log_slopes,
    KNOT_MAX, KNOT_MIN, SPLINE_KNOTS, SPLINE_SLOPES,
};

use crate::tensor::ImageTensor;
use crate::Result;

pub fn coupling_forward(x: &ImageTensor, net: &CouplingNet, p: &CouplingWeights<'_>) -> Result<(ImageTensor, f64)> {
    net.forward(x, p)
}

pub fn coupling_inverse(y: &ImageTensor, net: &CouplingNet, p: &CouplingWeights<'_>) -> Result<ImageTensor> {
    net.inverse(y, p)
}

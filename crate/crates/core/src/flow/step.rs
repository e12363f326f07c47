//! One Inverse-Flow step with owned parameters: inverse convolution, spline
//! activation, actnorm, 1×1 mixing and affine coupling, in that order.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::*;
use crate::invconv::{conv_forward, inv_conv_solve, MaskedKernel};
use crate::tensor::ImageTensor;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowStep {
    pub kernel: MaskedKernel,
    pub spline_log_slopes: Vec<f64>,
    pub spline_offsets: Vec<f64>,
    pub actnorm_log_scale: Vec<f64>,
    pub actnorm_bias: Vec<f64>,
    /// Row-major `C×C` mixing matrix.
    pub mix: Vec<f64>,
    pub net: CouplingNet,
    pub coupling: CouplingParams,
}

pub(crate) fn identity_matrix(c: usize) -> Vec<f64> {
    let mut m = vec![0.0; c * c];
    (0..c).for_each(|i| m[i * c + i] = 1.0);
    m
}

/// Random orthogonal matrix (Q factor of a Gaussian matrix).
pub(crate) fn random_orthogonal<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let a = nalgebra::DMatrix::from_fn(c, c, |_, _| n.sample(rng));
    let q = a.qr().q();
    let mut out = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            out[i * c + j] = q[(i, j)];
        }
    }
    out
}

impl FlowStep {
    pub fn identity(channels: usize, k: usize, hidden: usize) -> Result<Self> {
        let net = CouplingNet::new(channels, hidden)?;
        Ok(Self {
            kernel: MaskedKernel::identity(channels, k),
            spline_log_slopes: vec![0.0; channels * SPLINE_SLOPES],
            spline_offsets: vec![0.0; channels],
            actnorm_log_scale: vec![0.0; channels],
            actnorm_bias: vec![0.0; channels],
            mix: identity_matrix(channels),
            coupling: net.zeros(),
            net,
        })
    }

    /// Every parameter perturbed away from the identity, including the
    /// zero-initialised coupling output and the inverse-convolution kernel.
    pub fn random<R: Rng + ?Sized>(channels: usize, k: usize, hidden: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let mut s = Self::identity(channels, k, hidden)?;
        let n = Normal::new(0.0, scale).expect("valid scale");
        s.kernel = MaskedKernel::random_stable(channels, k, 0.5, rng);
        for v in s
            .spline_log_slopes
            .iter_mut()
            .chain(&mut s.spline_offsets)
            .chain(&mut s.actnorm_log_scale)
            .chain(&mut s.actnorm_bias)
        {
            *v = n.sample(rng);
        }
        s.mix = random_orthogonal(channels, rng);
        s.coupling = s.net.init(rng);
        for v in s.coupling.w3.iter_mut().chain(&mut s.coupling.b3) {
            *v = n.sample(rng);
        }
        Ok(s)
    }
}

pub fn invflow_step_forward(x: &ImageTensor, step: &FlowStep) -> Result<(ImageTensor, f64)> {
    let h = inv_conv_solve(x, &step.kernel)?;
    let (h, ld1) = spline_act_forward(&h, &step.spline_log_slopes, &step.spline_offsets)?;
    let (h, ld2) = actnorm_forward(&h, &step.actnorm_log_scale, &step.actnorm_bias)?;
    let (h, ld3) = inv1x1_forward(&h, &step.mix)?;
    let (y, ld4) = step.net.forward(&h, &step.coupling.view())?;
    Ok((y, ld1 + ld2 + ld3 + ld4))
}

pub fn invflow_step_inverse(y: &ImageTensor, step: &FlowStep) -> Result<ImageTensor> {
    let h = step.net.inverse(y, &step.coupling.view())?;
    let h = inv1x1_inverse(&h, &step.mix)?;
    let h = actnorm_inverse(&h, &step.actnorm_log_scale, &step.actnorm_bias)?;
    let h = spline_act_inverse(&h, &step.spline_log_slopes, &step.spline_offsets)?;
    conv_forward(&h, &step.kernel)
}

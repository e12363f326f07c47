//! Affine coupling. The first half of the channels passes through and
//! drives a small convolutional network producing a scale and shift for the
//! second half: `y₂ = x₂ ⊙ σ(s) + t`, with `σ(s) = 0.5 + sigmoid(s)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::reshape::{concat_channels, require_even_channels, split_channels};
use crate::invconv::StdConv;
use crate::tensor::ImageTensor;
use crate::{Error, Result};

/// Geometry of the conditioning network: 3×3 → tanh → 1×1 → tanh → 3×3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CouplingNet {
    pub channels: usize,
    pub hidden: usize,
}

/// Borrowed network parameters.
#[derive(Debug, Clone, Copy)]
pub struct CouplingWeights<'a> {
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
    pub w3: &'a [f64],
    pub b3: &'a [f64],
}

/// Owned network parameters or their gradients, same layout as [`CouplingWeights`].
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingParams {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl CouplingParams {
    pub fn view(&self) -> CouplingWeights<'_> {
        CouplingWeights {
            w1: &self.w1,
            b1: &self.b1,
            w2: &self.w2,
            b2: &self.b2,
            w3: &self.w3,
            b3: &self.b3,
        }
    }

    pub fn parts(&self) -> [&[f64]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }
}

struct Activations {
    h1: ImageTensor,
    h2: ImageTensor,
    log_sigma: ImageTensor,
    /// `sigmoid(s)(1 − sigmoid(s)) / σ`, i.e. `d log σ / ds`.
    dlog_sigma: ImageTensor,
    shift: ImageTensor,
}

impl CouplingNet {
    pub fn new(channels: usize, hidden: usize) -> Result<Self> {
        if !channels.is_multiple_of(2) || channels == 0 {
            return Err(Error::Shape(format!("coupling needs an even channel count, got {channels}")));
        }
        if hidden == 0 {
            return Err(Error::InvalidParameter("coupling hidden width must be positive".into()));
        }
        Ok(Self { channels, hidden })
    }

    fn half(&self) -> usize {
        self.channels / 2
    }

    pub fn conv1(&self) -> StdConv {
        StdConv::same(self.hidden, self.half(), 3)
    }

    pub fn conv2(&self) -> StdConv {
        StdConv::same(self.hidden, self.hidden, 1)
    }

    pub fn conv3(&self) -> StdConv {
        StdConv::same(self.channels, self.hidden, 3)
    }

    /// Shapes of `w1, b1, w2, b2, w3, b3`.
    pub fn shapes(&self) -> [Vec<usize>; 6] {
        let (h, c, half) = (self.hidden, self.channels, self.half());
        [vec![h, half, 3, 3], vec![h], vec![h, h, 1, 1], vec![h], vec![c, h, 3, 3], vec![c]]
    }

    /// Identity-producing parameters: everything zero.
    pub fn zeros(&self) -> CouplingParams {
        let [a, b, c, d, e, f] = self.shapes().map(|s| vec![0.0; s.iter().product()]);
        CouplingParams {
            w1: a,
            b1: b,
            w2: c,
            b2: d,
            w3: e,
            b3: f,
        }
    }

    /// Random hidden layers with fan-in scaling; the output layer is zero so
    /// the coupling starts as the identity.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> CouplingParams {
        let mut p = self.zeros();
        let fill = |v: &mut Vec<f64>, fan_in: usize, rng: &mut R| {
            let n = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("valid std");
            v.iter_mut().for_each(|x| *x = n.sample(rng));
        };
        fill(&mut p.w1, self.half() * 9, rng);
        fill(&mut p.w2, self.hidden, rng);
        p
    }

    fn check(&self, x: &ImageTensor, p: &CouplingWeights<'_>) -> Result<()> {
        require_even_channels(x, "coupling")?;
        if x.channels() != self.channels {
            return Err(Error::Shape(format!(
                "coupling built for {} channels, got {}",
                self.channels,
                x.channels()
            )));
        }
        let lens = self.shapes().map(|s| s.iter().product::<usize>());
        let got = [p.w1.len(), p.b1.len(), p.w2.len(), p.b2.len(), p.w3.len(), p.b3.len()];
        if lens != got {
            return Err(Error::Shape(format!("coupling parameter sizes {got:?}, expected {lens:?}")));
        }
        Ok(())
    }

    fn run(&self, x1: &ImageTensor, p: &CouplingWeights<'_>) -> Result<Activations> {
        let mut h1 = self.conv1().forward(x1, p.w1, Some(p.b1))?;
        h1.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = self.conv2().forward(&h1, p.w2, Some(p.b2))?;
        h2.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        let out = self.conv3().forward(&h2, p.w3, Some(p.b3))?;
        let (s, shift) = split_channels(&out, self.half())?;
        let mut log_sigma = s.clone();
        let mut dlog_sigma = s;
        for (ls, d) in log_sigma.data_mut().iter_mut().zip(dlog_sigma.data_mut()) {
            let sig = 1.0 / (1.0 + (-*ls).exp());
            let sigma = 0.5 + sig;
            *d = sig * (1.0 - sig) / sigma;
            *ls = sigma.ln();
        }
        Ok(Activations {
            h1,
            h2,
            log_sigma,
            dlog_sigma,
            shift,
        })
    }

    pub fn forward(&self, x: &ImageTensor, p: &CouplingWeights<'_>) -> Result<(ImageTensor, f64)> {
        self.check(x, p)?;
        let (x1, mut x2) = split_channels(x, self.half())?;
        let act = self.run(&x1, p)?;
        for ((v, ls), t) in x2.data_mut().iter_mut().zip(act.log_sigma.data()).zip(act.shift.data()) {
            *v = *v * ls.exp() + t;
        }
        Ok((concat_channels(&x1, &x2)?, act.log_sigma.sum()))
    }

    pub fn inverse(&self, y: &ImageTensor, p: &CouplingWeights<'_>) -> Result<ImageTensor> {
        self.check(y, p)?;
        let (y1, mut y2) = split_channels(y, self.half())?;
        let act = self.run(&y1, p)?;
        for ((v, ls), t) in y2.data_mut().iter_mut().zip(act.log_sigma.data()).zip(act.shift.data()) {
            *v = (*v - t) * (-ls).exp();
        }
        concat_channels(&y1, &y2)
    }

    /// Back-propagates `grad_y` for `L(y) − logdet`; returns `∂/∂x` and the
    /// parameter gradients.
    pub fn backward(
        &self,
        x: &ImageTensor,
        grad_y: &ImageTensor,
        p: &CouplingWeights<'_>,
    ) -> Result<(ImageTensor, CouplingParams)> {
        self.check(x, p)?;
        x.ensure_same_shape(grad_y, "coupling backward")?;
        let (x1, x2) = split_channels(x, self.half())?;
        let (g1, g2) = split_channels(grad_y, self.half())?;
        let act = self.run(&x1, p)?;

        let mut gx2 = g2.clone();
        let mut gs = g2.clone();
        for i in 0..gx2.len() {
            let sigma = act.log_sigma.data()[i].exp();
            let g = g2.data()[i];
            gx2.data_mut()[i] = g * sigma;
            // ∂/∂s of g·x₂·σ(s) − log σ(s)
            gs.data_mut()[i] = (g * x2.data()[i] * sigma - 1.0) * act.dlog_sigma.data()[i];
        }
        let g_out = concat_channels(&gs, &g2)?;

        let b3 = self.conv3().backward(&g_out, &act.h2, p.w3)?;
        let mut g_a2 = b3.grad_x;
        for (g, h) in g_a2.data_mut().iter_mut().zip(act.h2.data()) {
            *g *= 1.0 - h * h;
        }
        let b2 = self.conv2().backward(&g_a2, &act.h1, p.w2)?;
        let mut g_a1 = b2.grad_x;
        for (g, h) in g_a1.data_mut().iter_mut().zip(act.h1.data()) {
            *g *= 1.0 - h * h;
        }
        let b1 = self.conv1().backward(&g_a1, &x1, p.w1)?;
        let mut gx1 = g1;
        for (a, b) in gx1.data_mut().iter_mut().zip(b1.grad_x.data()) {
            *a += b;
        }
        Ok((
            concat_channels(&gx1, &gx2)?,
            CouplingParams {
                w1: b1.grad_w,
                b1: b1.grad_b,
                w2: b2.grad_w,
                b2: b2.grad_b,
                w3: b3.grad_w,
                b3: b3.grad_b,
            },
        ))
    }
}

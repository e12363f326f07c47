//! Multi-scale Inverse-Flow model.
//!
//! Each of the `L` blocks squeezes, applies `K` flow steps and (except the
//! last) splits off half of its channels as a Gaussian latent. The density
//! direction uses the inverse convolution; sampling runs the layers backwards
//! with the plain masked convolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::FlowConfig;
use super::layers::*;
use super::params::{ParamId, ParamKind, ParamStore};
use super::step::{random_orthogonal, FlowStep};
use crate::exec::Exec;
use crate::invconv::{conv_forward_with, inv_conv_backward, inv_conv_solve_with, MaskedKernel};
use crate::tensor::ImageTensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LayerKind {
    Squeeze,
    InvConv { weight: ParamId, channels: usize, k: usize },
    Spline { log_slopes: ParamId, offsets: ParamId },
    ActNorm { log_scale: ParamId, bias: ParamId },
    Mix { weight: ParamId },
    Coupling { net: CouplingNet, ids: [ParamId; 6] },
    Split,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    pub(crate) name: String,
    pub(crate) kind: LayerKind,
}

/// Everything the forward pass produced for one image.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input of every layer, followed by the output of the last one.
    pub activations: Vec<ImageTensor>,
    /// Latents in emission order; the last is the output of the final block.
    pub latents: Vec<ImageTensor>,
    pub layer_logdets: Vec<f64>,
    pub logdet: f64,
    pub log_prior: f64,
}

impl Trace {
    pub fn log_prob(&self) -> f64 {
        self.log_prior + self.logdet
    }
}

/// Per-item negative log-likelihoods and the batch mean in bits per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNll {
    pub nll: Vec<f64>,
    pub bpd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    config: FlowConfig,
    store: ParamStore,
    layers: Vec<Layer>,
    actnorm_initialized: bool,
}

impl FlowModel {
    /// Model whose every layer is the identity map.
    pub fn identity(config: &FlowConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        let k = config.kernel_size;
        let mut c = config.input_shape[0];
        for b in 0..config.blocks {
            c *= 4;
            layers.push(Layer {
                name: format!("b{b}.squeeze"),
                kind: LayerKind::Squeeze,
            });
            for s in 0..config.steps_per_block {
                let p = format!("b{b}.s{s}");
                let step = FlowStep::identity(c, k, config.hidden_width)?;
                let weight = store.add(
                    format!("{p}.invconv.weight"),
                    &[c, c, k, k],
                    ParamKind::MaskedKernel { channels: c, k },
                    step.kernel.into_weights(),
                );
                layers.push(Layer {
                    name: format!("{p}.invconv"),
                    kind: LayerKind::InvConv { weight, channels: c, k },
                });
                let log_slopes = store.add(
                    format!("{p}.spline.log_slopes"),
                    &[c, SPLINE_SLOPES],
                    ParamKind::Free,
                    step.spline_log_slopes,
                );
                let offsets = store.add(format!("{p}.spline.offsets"), &[c], ParamKind::Free, step.spline_offsets);
                layers.push(Layer {
                    name: format!("{p}.spline"),
                    kind: LayerKind::Spline { log_slopes, offsets },
                });
                let log_scale =
                    store.add(format!("{p}.actnorm.log_scale"), &[c], ParamKind::Free, step.actnorm_log_scale);
                let bias = store.add(format!("{p}.actnorm.bias"), &[c], ParamKind::Free, step.actnorm_bias);
                layers.push(Layer {
                    name: format!("{p}.actnorm"),
                    kind: LayerKind::ActNorm { log_scale, bias },
                });
                let weight = store.add(format!("{p}.mix.weight"), &[c, c], ParamKind::Free, step.mix);
                layers.push(Layer {
                    name: format!("{p}.mix"),
                    kind: LayerKind::Mix { weight },
                });
                let names = ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "conv3.weight", "conv3.bias"];
                let shapes = step.net.shapes();
                let values = step.coupling.parts();
                let ids: [ParamId; 6] = std::array::from_fn(|i| {
                    store.add(
                        format!("{p}.coupling.{}", names[i]),
                        &shapes[i],
                        ParamKind::Free,
                        values[i].to_vec(),
                    )
                });
                layers.push(Layer {
                    name: format!("{p}.coupling"),
                    kind: LayerKind::Coupling { net: step.net, ids },
                });
            }
            if b + 1 < config.blocks {
                layers.push(Layer {
                    name: format!("b{b}.split"),
                    kind: LayerKind::Split,
                });
                c /= 2;
            }
        }
        Ok(Self {
            config: config.clone(),
            store,
            layers,
            actnorm_initialized: false,
        })
    }

    /// Training initialisation: random orthogonal mixing and random hidden
    /// coupling layers; everything else starts at the identity.
    pub fn new<R: Rng + ?Sized>(config: &FlowConfig, rng: &mut R) -> Result<Self> {
        let mut m = Self::identity(config)?;
        let layers = m.layers.clone();
        for layer in &layers {
            match &layer.kind {
                LayerKind::Mix { weight } => {
                    let c = m.store.entry(*weight).shape[0];
                    m.store.get_mut(*weight).copy_from_slice(&random_orthogonal(c, rng));
                }
                LayerKind::Coupling { net, ids } => {
                    let p = net.init(rng);
                    for (id, v) in ids.iter().zip(p.parts()) {
                        m.store.get_mut(*id).copy_from_slice(v);
                    }
                }
                _ => {}
            }
        }
        Ok(m)
    }

    /// Moves every parameter away from its initial value (test helper for
    /// exercising all code paths); inverse-convolution kernels stay well
    /// conditioned.
    pub fn perturb<R: Rng + ?Sized>(&mut self, scale: f64, rng: &mut R) {
        let layers = self.layers.clone();
        for layer in &layers {
            match &layer.kind {
                LayerKind::InvConv { weight, channels, k } => {
                    let w = MaskedKernel::random_stable(*channels, *k, 0.5, rng);
                    self.store.get_mut(*weight).copy_from_slice(w.weights());
                }
                LayerKind::Mix { weight } => {
                    let c = self.store.entry(*weight).shape[0];
                    let q = random_orthogonal(c, rng);
                    for (a, b) in self.store.get_mut(*weight).iter_mut().zip(q) {
                        *a += scale * b;
                    }
                }
                LayerKind::Spline { log_slopes, offsets } => self.jitter(&[*log_slopes, *offsets], scale, rng),
                LayerKind::ActNorm { log_scale, bias } => self.jitter(&[*log_scale, *bias], scale, rng),
                LayerKind::Coupling { ids, .. } => self.jitter(ids, scale, rng),
                LayerKind::Squeeze | LayerKind::Split => {}
            }
        }
        self.store.project_masks();
    }

    fn jitter<R: Rng + ?Sized>(&mut self, ids: &[ParamId], scale: f64, rng: &mut R) {
        for id in ids {
            for v in self.store.get_mut(*id) {
                let n: f64 = StandardNormal.sample(rng);
                *v += scale * n;
            }
        }
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn is_inv_conv_layer(&self, index: usize) -> bool {
        matches!(self.layers.get(index).map(|l| &l.kind), Some(LayerKind::InvConv { .. }))
    }

    pub fn actnorm_initialized(&self) -> bool {
        self.actnorm_initialized
    }

    pub fn set_actnorm_initialized(&mut self, v: bool) {
        self.actnorm_initialized = v;
    }

    pub fn dims(&self) -> usize {
        self.config.dims()
    }

    /// Shapes of the latents in emission order.
    pub fn latent_shapes(&self) -> Vec<(usize, usize, usize)> {
        let [mut c, mut h, mut w] = self.config.input_shape;
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer.kind {
                LayerKind::Squeeze => {
                    c *= 4;
                    h /= 2;
                    w /= 2;
                }
                LayerKind::Split => {
                    c /= 2;
                    out.push((c, h, w));
                }
                _ => {}
            }
        }
        out.push((c, h, w));
        out
    }

    /// Flow step `(block, step)` with owned copies of its parameters.
    pub fn step(&self, block: usize, step: usize) -> Result<FlowStep> {
        let prefix = format!("b{block}.s{step}.");
        let mut parts = self.layers.iter().filter(|l| l.name.starts_with(&prefix));
        let err = || Error::InvalidParameter(format!("no flow step {block}.{step}"));
        let mut next = || parts.next().map(|l| l.kind.clone()).ok_or_else(err);
        let (LayerKind::InvConv { weight, channels, k }, LayerKind::Spline { log_slopes, offsets }, LayerKind::ActNorm { log_scale, bias }, LayerKind::Mix { weight: mix }, LayerKind::Coupling { net, ids }) =
            (next()?, next()?, next()?, next()?, next()?)
        else {
            return Err(err());
        };
        let g = |id: ParamId| self.store.get(id).to_vec();
        Ok(FlowStep {
            kernel: MaskedKernel::new(channels, k, g(weight))?,
            spline_log_slopes: g(log_slopes),
            spline_offsets: g(offsets),
            actnorm_log_scale: g(log_scale),
            actnorm_bias: g(bias),
            mix: g(mix),
            net,
            coupling: CouplingParams {
                w1: g(ids[0]),
                b1: g(ids[1]),
                w2: g(ids[2]),
                b2: g(ids[3]),
                w3: g(ids[4]),
                b3: g(ids[5]),
            },
        })
    }

    fn kernel(&self, weight: ParamId, channels: usize, k: usize) -> Result<MaskedKernel> {
        MaskedKernel::new(channels, k, self.store.get(weight).to_vec())
    }

    fn coupling_weights(&self, ids: &[ParamId; 6]) -> CouplingWeights<'_> {
        let g = |i: usize| self.store.get(ids[i]);
        CouplingWeights {
            w1: g(0),
            b1: g(1),
            w2: g(2),
            b2: g(3),
            w3: g(4),
            b3: g(5),
        }
    }

    /// Applies one non-split layer in the density direction.
    fn layer_forward(&self, layer: &Layer, x: &ImageTensor, exec: &Exec) -> Result<(ImageTensor, f64)> {
        let s = &self.store;
        match &layer.kind {
            LayerKind::Squeeze => Ok((squeeze(x)?, 0.0)),
            // unit-triangular Jacobian: the log-det is zero by construction
            LayerKind::InvConv { weight, channels, k } => {
                Ok((inv_conv_solve_with(x, &self.kernel(*weight, *channels, *k)?, exec)?, 0.0))
            }
            LayerKind::Spline { log_slopes, offsets } => spline_act_forward(x, s.get(*log_slopes), s.get(*offsets)),
            LayerKind::ActNorm { log_scale, bias } => actnorm_forward(x, s.get(*log_scale), s.get(*bias)),
            LayerKind::Mix { weight } => inv1x1_forward(x, s.get(*weight)),
            LayerKind::Coupling { net, ids } => net.forward(x, &self.coupling_weights(ids)),
            LayerKind::Split => unreachable!("split is handled by the caller"),
        }
    }

    fn non_finite(&self, index: usize) -> Error {
        Error::NonFiniteLayer {
            index,
            name: self.layers[index].name.clone(),
        }
    }

    /// Density-direction pass over one image.
    pub fn trace(&self, x: &ImageTensor, exec: &Exec) -> Result<Trace> {
        let [c, h, w] = self.config.input_shape;
        if x.shape() != (c, h, w) {
            return Err(Error::Shape(format!(
                "model expects {:?}, got {:?}",
                (c, h, w),
                x.shape()
            )));
        }
        x.ensure_finite("model input")?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut latents = Vec::new();
        let mut layer_logdets = Vec::with_capacity(self.layers.len());
        let mut log_prior = 0.0;
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (next, ld) = if let LayerKind::Split = layer.kind {
                let (keep, z, logp) = split(&cur)?;
                log_prior += logp;
                latents.push(z);
                (keep, 0.0)
            } else {
                self.layer_forward(layer, &cur, exec)?
            };
            if !ld.is_finite() || next.data().iter().any(|v| !v.is_finite()) {
                return Err(self.non_finite(i));
            }
            layer_logdets.push(ld);
            activations.push(std::mem::replace(&mut cur, next));
        }
        log_prior += standard_normal_log_density(&cur);
        latents.push(cur.clone());
        activations.push(cur);
        Ok(Trace {
            activations,
            latents,
            logdet: layer_logdets.iter().sum(),
            layer_logdets,
            log_prior,
        })
    }

    /// Density-direction pass: latents and total log-det.
    pub fn forward(&self, x: &ImageTensor) -> Result<(Vec<ImageTensor>, f64)> {
        let t = self.trace(x, &Exec::serial())?;
        Ok((t.latents, t.logdet))
    }

    pub fn log_prob(&self, x: &ImageTensor) -> Result<f64> {
        Ok(self.trace(x, &Exec::serial())?.log_prob())
    }

    /// Sampling-direction pass from a latent stack.
    pub fn inverse_with(&self, latents: &[ImageTensor], exec: &Exec) -> Result<ImageTensor> {
        let shapes = self.latent_shapes();
        if latents.len() != shapes.len() || latents.iter().zip(&shapes).any(|(z, s)| z.shape() != *s) {
            return Err(Error::Shape("latent stack does not match the model".into()));
        }
        let s = &self.store;
        let mut pending = latents.len() - 1;
        let mut cur = latents[pending].clone();
        for layer in self.layers.iter().rev() {
            cur = match &layer.kind {
                LayerKind::Squeeze => unsqueeze(&cur)?,
                LayerKind::InvConv { weight, channels, k } => {
                    conv_forward_with(&cur, &self.kernel(*weight, *channels, *k)?, exec)?
                }
                LayerKind::Spline { log_slopes, offsets } => spline_act_inverse(&cur, s.get(*log_slopes), s.get(*offsets))?,
                LayerKind::ActNorm { log_scale, bias } => actnorm_inverse(&cur, s.get(*log_scale), s.get(*bias))?,
                LayerKind::Mix { weight } => inv1x1_inverse(&cur, s.get(*weight))?,
                LayerKind::Coupling { net, ids } => net.inverse(&cur, &self.coupling_weights(ids))?,
                LayerKind::Split => {
                    pending -= 1;
                    unsplit(&cur, &latents[pending])?
                }
            };
        }
        Ok(cur)
    }

    pub fn inverse(&self, latents: &[ImageTensor]) -> Result<ImageTensor> {
        self.inverse_with(latents, &Exec::serial())
    }

    /// Per-item work runs across the pool when the batch can fill it,
    /// otherwise the pool drives the wavefront inside each item.
    fn batch_map<T: Send, F>(&self, n: usize, exec: &Exec, f: F) -> Vec<T>
    where
        F: Fn(usize, &Exec) -> T + Send + Sync,
    {
        if n >= exec.threads() {
            let serial = Exec::serial();
            exec.map(n, |i| f(i, &serial))
        } else {
            (0..n).map(|i| f(i, exec)).collect()
        }
    }

    /// Negative log-likelihood of each item and the mean bits per dimension
    /// including `bpd_offset`.
    pub fn log_prob_batch(&self, batch: &[ImageTensor], bpd_offset: f64, exec: &Exec) -> Result<BatchNll> {
        let nll = self
            .batch_map(batch.len(), exec, |i, ex| self.trace(&batch[i], ex).map(|t| -t.log_prob()))
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;
        let mean = nll.iter().sum::<f64>() / nll.len().max(1) as f64;
        Ok(BatchNll {
            bpd: nll_to_bpd(mean, self.dims(), bpd_offset),
            nll,
        })
    }

    /// Draws `n` images with latents `z ~ N(0, T²)`. Sample `i` uses its own
    /// random stream, so results do not depend on the thread count.
    pub fn sample(&self, n: usize, temperature: f64, seed: u64, exec: &Exec) -> Result<Vec<ImageTensor>> {
        let shapes = self.latent_shapes();
        self.batch_map(n, exec, |i, ex| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let latents: Vec<ImageTensor> = shapes
                .iter()
                .map(|&(c, h, w)| {
                    let mut z = ImageTensor::random_normal(c, h, w, &mut rng);
                    z.scale(temperature);
                    z
                })
                .collect();
            self.inverse_with(&latents, ex)
        })
        .into_iter()
        .collect()
    }

    /// Gradient of `−log p(x)` for one image with respect to every parameter
    /// (accumulated into `grads`) and the input (returned).
    pub fn backward_item(&self, trace: &Trace, grads: &mut [f64], exec: &Exec) -> Result<ImageTensor> {
        let s = &self.store;
        let mut pending = trace.latents.len() - 1;
        // ∂(−log N(z))/∂z = z
        let mut g = trace.latents[pending].clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.activations[i];
            g = match &layer.kind {
                LayerKind::Squeeze => unsqueeze(&g)?,
                LayerKind::Split => {
                    pending -= 1;
                    concat_channels(&g, &trace.latents[pending])?
                }
                LayerKind::InvConv { weight, channels, k } => {
                    let kernel = self.kernel(*weight, *channels, *k)?;
                    let out = inv_conv_backward(&g, &trace.activations[i + 1], &kernel, exec)?;
                    add(&mut grads[s.range(*weight)], &out.grad_weights);
                    out.grad_input
                }
                LayerKind::Spline { log_slopes, offsets } => {
                    let (r1, r2) = (s.range(*log_slopes), s.range(*offsets));
                    let (gl, go) = two_ranges(grads, r1, r2);
                    spline_act_backward(x, &g, s.get(*log_slopes), s.get(*offsets), gl, go)?
                }
                LayerKind::ActNorm { log_scale, bias } => {
                    let (gl, gb) = two_ranges(grads, s.range(*log_scale), s.range(*bias));
                    actnorm_backward(x, &g, s.get(*log_scale), gl, gb)?
                }
                LayerKind::Mix { weight } => inv1x1_backward(x, &g, s.get(*weight), &mut grads[s.range(*weight)])?,
                LayerKind::Coupling { net, ids } => {
                    let (gx, gp) = net.backward(x, &g, &self.coupling_weights(ids))?;
                    for (id, part) in ids.iter().zip(gp.parts()) {
                        add(&mut grads[s.range(*id)], part);
                    }
                    gx
                }
            };
        }
        Ok(g)
    }

    /// Mean NLL over the batch and its gradient with respect to the flat
    /// parameter vector. Per-item gradients are summed in item order.
    pub fn loss_and_grad(&self, batch: &[ImageTensor], exec: &Exec) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidParameter("empty batch".into()));
        }
        let p = self.store.len();
        let items = self.batch_map(batch.len(), exec, |i, ex| -> Result<(f64, Vec<f64>)> {
            let t = self.trace(&batch[i], ex)?;
            let mut g = vec![0.0; p];
            self.backward_item(&t, &mut g, ex)?;
            Ok((-t.log_prob(), g))
        });
        let n = batch.len() as f64;
        let mut total = 0.0;
        let mut grads = vec![0.0; p];
        for item in items {
            let (nll, g) = item?;
            total += nll;
            add(&mut grads, &g);
        }
        grads.iter_mut().for_each(|v| *v /= n);
        Ok((total / n, grads))
    }

    /// Data-dependent actnorm initialisation: each actnorm layer normalises
    /// its inputs over `batch` to zero mean and unit variance per channel.
    pub fn initialize_actnorm(&mut self, batch: &[ImageTensor], exec: &Exec) -> Result<()> {
        let mut acts: Vec<ImageTensor> = batch.to_vec();
        for i in 0..self.layers.len() {
            let layer = self.layers[i].clone();
            if let LayerKind::ActNorm { log_scale, bias } = layer.kind {
                let (ls, b) = actnorm_data_init(&acts)?;
                self.store.get_mut(log_scale).copy_from_slice(&ls);
                self.store.get_mut(bias).copy_from_slice(&b);
            }
            let model = &*self;
            acts = model
                .batch_map(acts.len(), exec, |j, ex| {
                    if let LayerKind::Split = layer.kind {
                        split(&acts[j]).map(|(keep, _, _)| keep)
                    } else {
                        model.layer_forward(&layer, &acts[j], ex).map(|(y, _)| y)
                    }
                })
                .into_iter()
                .collect::<Result<_>>()?;
            if acts.iter().any(|a| a.data().iter().any(|v| !v.is_finite())) {
                return Err(self.non_finite(i));
            }
        }
        self.actnorm_initialized = true;
        Ok(())
    }
}

pub fn nll_to_bpd(nll: f64, dims: usize, bpd_offset: f64) -> f64 {
    nll / (dims as f64 * std::f64::consts::LN_2) + bpd_offset
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn two_ranges(
    v: &mut [f64],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    assert!(a.end <= b.start, "parameters are laid out in registration order");
    let (lo, hi) = v.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.len()])
}

/// `(nll per item, mean bpd)` of a batch.
pub fn model_log_prob(batch: &[ImageTensor], model: &FlowModel, bpd_offset: f64, exec: &Exec) -> Result<BatchNll> {
    model.log_prob_batch(batch, bpd_offset, exec)
}

pub fn model_sample(n: usize, temperature: f64, model: &FlowModel, seed: u64, exec: &Exec) -> Result<Vec<ImageTensor>> {
    model.sample(n, temperature, seed, exec)
}

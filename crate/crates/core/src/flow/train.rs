//! Mini-batch maximum-likelihood training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamOutcome, AdamState};
use super::config::FlowConfig;
use super::model::{nll_to_bpd, FlowModel};
use crate::data::{dequantize_batch, Dataset};
use crate::exec::Exec;
use crate::tensor::ImageTensor;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub nll: f64,
    pub bpd: f64,
    pub outcome: AdamOutcome,
}

/// Model, optimizer state and the random stream that picks batches.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: FlowModel,
    pub adam: AdamState,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: &FlowConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = FlowModel::new(config, &mut rng)?;
        Ok(Self::from_parts(model, None, 0, rng))
    }

    pub fn from_parts(model: FlowModel, adam: Option<AdamState>, step: u64, rng: ChaCha8Rng) -> Self {
        let adam = adam.unwrap_or_else(|| AdamState::new(model.params().len()));
        Self { model, adam, step, rng }
    }

    /// One update on an already dequantized, centred batch.
    pub fn step_on(&mut self, batch: &[ImageTensor], bpd_offset: f64, exec: &Exec) -> Result<StepStats> {
        if !self.model.actnorm_initialized() {
            self.model.initialize_actnorm(batch, exec)?;
        }
        let (nll, grads) = self.model.loss_and_grad(batch, exec)?;
        let lr = self.model.config().learning_rate;
        let outcome = adam_step(self.model.params_mut(), &grads, &mut self.adam, lr);
        self.step += 1;
        Ok(StepStats {
            step: self.step,
            nll,
            bpd: nll_to_bpd(nll, self.model.dims(), bpd_offset),
            outcome,
        })
    }

    /// Draws the next batch from `data` with the trainer's stream.
    pub fn next_batch(&mut self, data: &Dataset) -> (Vec<ImageTensor>, f64) {
        let n = self.model.config().batch_size;
        let idx: Vec<usize> = (0..n).map(|_| self.rng.random_range(0..data.len())).collect();
        let seed = self.rng.random::<u64>();
        let items: Vec<_> = idx.iter().map(|&i| &data.images()[i]).collect();
        dequantize_batch(&items, seed)
    }

    /// Samples a batch from `data` and takes one step on it.
    pub fn train_step(&mut self, data: &Dataset, exec: &Exec) -> Result<StepStats> {
        let (batch, offset) = self.next_batch(data);
        self.step_on(&batch, offset, exec)
    }
}

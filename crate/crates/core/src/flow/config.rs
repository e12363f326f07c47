use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture and optimisation settings of an Inverse-Flow model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    /// Flow steps per block (K).
    pub steps_per_block: usize,
    /// Number of blocks (L).
    pub blocks: usize,
    pub kernel_size: usize,
    /// `[channels, height, width]` of the data.
    pub input_shape: [usize; 3],
    pub hidden_width: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

fn default_learning_rate() -> f64 {
    DEFAULT_LEARNING_RATE
}

fn default_batch_size() -> usize {
    16
}

impl FlowConfig {
    pub fn new(steps_per_block: usize, blocks: usize, input_shape: [usize; 3]) -> Self {
        Self {
            steps_per_block,
            blocks,
            kernel_size: 3,
            input_shape,
            hidden_width: 16,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: default_batch_size(),
            seed: 0,
        }
    }

    /// Every violated invariant, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let [c, h, w] = self.input_shape;
        if self.steps_per_block < 1 {
            out.push("steps_per_block: must be >= 1".to_string());
        }
        if self.blocks < 1 {
            out.push("blocks: must be >= 1".to_string());
        }
        if self.kernel_size < 1 {
            out.push("kernel_size: must be >= 1".to_string());
        }
        if c == 0 || h == 0 || w == 0 {
            out.push("input_shape: extents must be positive".to_string());
        } else if self.blocks >= 1 && self.blocks < 32 {
            let div = 1usize << self.blocks;
            if h % div != 0 || w % div != 0 {
                out.push(format!(
                    "input_shape: height and width must be divisible by 2^blocks = {div}"
                ));
            }
        }
        if self.hidden_width < 1 {
            out.push("hidden_width: must be >= 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push("learning_rate: must be positive and finite".to_string());
        }
        if self.batch_size < 1 {
            out.push("batch_size: must be >= 1".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn dims(&self) -> usize {
        self.input_shape.iter().product()
    }
}

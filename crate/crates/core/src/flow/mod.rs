//! The Inverse-Flow density model: layers, multi-scale composition,
//! likelihood, sampling and training.

mod adam;
mod config;
pub mod layers;
mod model;
mod params;
mod step;
mod train;

pub use adam::{adam_step, AdamOutcome, AdamState, BETA1, BETA2, EPSILON};
pub use config::{FlowConfig, DEFAULT_LEARNING_RATE};
pub use layers::*;
pub use model::{model_log_prob, model_sample, nll_to_bpd, BatchNll, FlowModel, Trace};
pub use params::{ParamEntry, ParamId, ParamKind, ParamStore};
pub use step::{invflow_step_forward, invflow_step_inverse, FlowStep};
pub use train::{StepStats, Trainer};

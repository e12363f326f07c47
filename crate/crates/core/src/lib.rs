//! Invertible masked convolutions and the Inverse-Flow density model.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`schedule`]: image storage, 1-based pixel indexing, the
//!   pixel partial order, dependency windows and the anti-diagonal wavefront.
//! - [`invconv`]: the masked convolution, its exact inverse, and the fast
//!   input/weight gradients of that inverse (plus reference recursions).
//! - [`oracle`]: slow dense baselines used by tests and the `verify` command.
//! - [`flow`]: the multi-scale flow, its layers, training and sampling.
//! - [`data`]: IDX parsing, synthetic corpora, dequantization, checkpoints.
//! - [`report`] and [`verify`]: timing statistics, run reports and the
//!   property suite behind the CLI.

pub mod data;
pub mod error;
pub mod exec;
pub mod flow;
pub mod invconv;
pub mod oracle;
pub mod report;
pub mod schedule;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use exec::Exec;
pub use schedule::{build_schedule, delta_set, pixel_leq, DiagonalSchedule, Pixel};
pub use tensor::ImageTensor;

//! Datasets, dequantization, image output and checkpoints.

mod checkpoint;
mod dataset;
mod dequant;
mod idx;
mod pnm;
mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, save_model, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{Dataset, U8Image};
pub use dequant::{denormalize, dequantize, dequantize_batch, quantize, BPD_OFFSET_8BIT};
pub use idx::{load_mnist_idx, parse_idx_images, parse_idx_labels, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC};
pub use pnm::{image_grid, write_pnm};
pub use synth::{synth_dataset, SynthKind};

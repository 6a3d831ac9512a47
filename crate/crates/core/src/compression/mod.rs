//! Magnitude pruning and low-bit quantization.

pub mod model;
pub mod pipeline;
pub mod prune;
pub mod quant;

pub use model::{report_model_stats, CompressedModel, CompressedTensor, ModelStats};
pub use pipeline::{calibrate, calibrate_codec, compress, prune_stage, quantize_stage, CompressConfig, FineTune};
pub use prune::{prune_model, PruneMasks, PruneSpec};
pub use quant::{ActivationRangeState, QuantScheme, QuantizedTensor};

//! Swin-transformer encoder and decoder.

pub mod config;
pub mod model;
pub mod patch;
pub mod power;
pub mod swin;

pub use config::{channels_for_rate, effective_window, ModelConfig, StageConfig};
pub use model::{Decoder, Encoder, SwinSitCodec};
pub use patch::{merge_gather, patchify, PatchDivide, PatchEmbed, PatchMerge, SemanticMap};
pub use power::{power_normalize, ComplexSymbols};
pub use swin::{SwinBlock, SwinStage, WindowAttention};

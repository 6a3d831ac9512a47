//! End-to-end training, ablation variants and SNR sweeps.

pub mod config;
pub mod eval;
pub mod link;
pub mod train;

pub use config::{sample_snr, TrainConfig, Variant};
pub use eval::{evaluate, spearman, EvalCurve, EvalRow};
pub use link::{ChannelRng, Link};
pub use train::{mse_loss, train, TrainOptions, TrainReport, Trainer};

use candle_core::DType;

use crate::codec::SwinSitCodec;
use crate::error::Result;

/// Fresh codec for the configured variant.
pub fn build_variant(cfg: &TrainConfig) -> Result<SwinSitCodec> {
    SwinSitCodec::new(cfg.model_config()?, DType::F32, cfg.seed)
}

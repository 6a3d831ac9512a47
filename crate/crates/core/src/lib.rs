//! Swin-transformer semantic image transmission over simulated fading
//! channels.

pub mod ceac;
pub mod checkpoint;
pub mod channel;
pub mod codec;
pub mod compression;
pub mod data;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod rng;
pub mod snr;
pub mod training;

pub use error::{Error, Result};

//! Channel estimation and compensation: pilot-based ML estimates, a
//! convolutional refiner over grids of estimates, and zero-forcing.

pub mod dncnn;
pub mod estimate;
pub mod train;

pub use dncnn::{DnCnn, DnCnnConfig, Denoiser};
pub use estimate::{dncnn_loss, equalize, ml_estimate, zf_coefficient, EstimateGrid, DEEP_FADE};
pub use train::{channel_bench, train_dncnn, BenchRow, DnCnnTrainConfig, Estimator};

//! Activation calibration and the prune, quantize, fine-tune driver.

use std::collections::BTreeMap;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::codec::SwinSitCodec;
use crate::compression::model::CompressedModel;
use crate::compression::prune::{prune_model, PruneMasks};
use crate::compression::quant::{update_activation_range_extremes, ActivationRangeState, QuantScheme};
use crate::error::{Error, Result};
use crate::nn::{ForwardCtx, QuantRuntime};

/// Run `batches` forward passes through `pass` with observation enabled and
/// fold each batch's per-layer input extremes into an EMA range.
///
/// `base` carries the weight-quantization setting the passes should see; its
/// activation ranges are ignored so calibration observes unclamped inputs.
pub fn calibrate<F>(
    batches: usize,
    beta: f64,
    base: Option<&QuantRuntime>,
    mut pass: F,
) -> Result<BTreeMap<String, ActivationRangeState>>
where
    F: FnMut(usize, &ForwardCtx) -> Result<()>,
{
    if batches == 0 {
        return Err(Error::arg("calibration needs at least one batch"));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::arg(format!("beta must be in [0, 1], got {beta}")));
    }
    let quant = base.map(|q| QuantRuntime {
        activations: BTreeMap::new(),
        ..q.clone()
    });
    let mut states: BTreeMap<String, ActivationRangeState> = BTreeMap::new();
    for i in 0..batches {
        let ctx = ForwardCtx::eval().with_quant(quant.clone()).observing();
        pass(i, &ctx)?;
        for (name, (lo, hi)) in ctx.take_observations() {
            let st = states.entry(name).or_default();
            *st = update_activation_range_extremes(*st, lo, hi, beta)?;
        }
    }
    Ok(states)
}

/// Calibrate a codec on clean images: encode at the given SNR and decode the
/// transmitted symbols without channel impairment.
pub fn calibrate_codec(
    codec: &SwinSitCodec,
    images: &[Tensor],
    snr_db: f64,
    beta: f64,
    base: Option<&QuantRuntime>,
) -> Result<BTreeMap<String, ActivationRangeState>> {
    calibrate(images.len(), beta, base, |i, ctx| {
        let y = codec.encode(&images[i], &[snr_db], ctx)?;
        codec.decode(&y, &[snr_db], ctx)?;
        Ok(())
    })
}

/// Training hooks the driver needs; implemented by the training loop.
pub trait FineTune {
    /// `steps` optimizer steps on `codec`. Implementations re-apply `masks`
    /// after every step and forward with `quant` when given.
    fn fine_tune(
        &mut self,
        codec: &SwinSitCodec,
        masks: &PruneMasks,
        quant: Option<&QuantRuntime>,
        steps: usize,
    ) -> Result<()>;

    /// One forward pass over calibration batch `index`.
    fn calibration_pass(&mut self, codec: &SwinSitCodec, index: usize, ctx: &ForwardCtx) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressConfig {
    pub sparsity: f64,
    pub bits: u32,
    /// EMA weight of the newest calibration batch.
    pub beta: f64,
    pub calib_batches: usize,
    pub prune_steps: usize,
    pub quant_steps: usize,
}

impl CompressConfig {
    /// Fine-tuning budgets of 20% of `train_steps` after each of the two
    /// compression steps.
    pub fn with_budget(sparsity: f64, bits: u32, train_steps: usize) -> Self {
        let ft = (train_steps as f64 * 0.2).round() as usize;
        Self {
            sparsity,
            bits,
            beta: 0.1,
            calib_batches: 8,
            prune_steps: ft,
            quant_steps: ft,
        }
    }
}

/// Step 1: global magnitude pruning followed by masked fine-tuning.
pub fn prune_stage(codec: &SwinSitCodec, cfg: &CompressConfig, tuner: &mut dyn FineTune) -> Result<PruneMasks> {
    let masks = prune_model(&codec.store, cfg.sparsity)?;
    log::info!(
        "pruned {} of {} dense weights (gamma = {:.3e})",
        masks.pruned(),
        masks.covered(),
        masks.spec.gamma
    );
    if cfg.prune_steps > 0 {
        tuner.fine_tune(codec, &masks, None, cfg.prune_steps)?;
        masks.apply(&codec.store)?;
    }
    Ok(masks)
}

/// Steps 2 and 3: per-tensor weight quantization, activation calibration,
/// then fine-tuning with straight-through rounding. At 32 bits activations
/// keep full precision, so only the weight grid is applied.
pub fn quantize_stage(
    codec: &SwinSitCodec,
    masks: &PruneMasks,
    cfg: &CompressConfig,
    tuner: &mut dyn FineTune,
) -> Result<CompressedModel> {
    QuantScheme::new(cfg.bits)?;
    let mut quant = QuantRuntime {
        bits: cfg.bits,
        quantize_weights: true,
        activations: BTreeMap::new(),
    };
    if cfg.bits < 32 {
        quant.activations = calibrate(cfg.calib_batches, cfg.beta, Some(&quant), |i, ctx| {
            tuner.calibration_pass(codec, i, ctx)
        })?;
    }
    if cfg.quant_steps > 0 {
        tuner.fine_tune(codec, masks, Some(&quant), cfg.quant_steps)?;
        masks.apply(&codec.store)?;
    }
    CompressedModel::from_codec(codec, masks, &quant)
}

/// Both stages. `codec` is updated in place and the packed result returned.
pub fn compress(codec: &SwinSitCodec, cfg: &CompressConfig, tuner: &mut dyn FineTune) -> Result<CompressedModel> {
    QuantScheme::new(cfg.bits)?;
    let masks = prune_stage(codec, cfg, tuner)?;
    quantize_stage(codec, &masks, cfg, tuner)
}

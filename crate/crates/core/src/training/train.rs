//! End-to-end optimization of the codec through the simulated link.

use std::path::PathBuf;

use candle_core::{DType, Tensor};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::codec::SwinSitCodec;
use crate::compression::{FineTune, PruneMasks};
use crate::data::{shuffled_batches, ImageSet};
use crate::error::{Error, Result};
use crate::nn::{ForwardCtx, QuantRuntime};
use crate::rng::{self, Stream, StreamRng};
use crate::training::config::{sample_snr, TrainConfig};
use crate::training::link::{ChannelRng, Link};

/// Seed offset of the fixed validation channel.
const VAL_SEED_OFFSET: u64 = 0x7661_6c;
/// Seed offset of calibration channels.
const CALIB_SEED_OFFSET: u64 = 0x6361_6c;

/// Batch-mean squared error between reconstruction and source.
pub fn mse_loss(x_hat: &Tensor, x: &Tensor) -> Result<Tensor> {
    Ok((x_hat - x.to_dtype(x_hat.dtype())?)?.sqr()?.mean_all()?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Stateful optimizer loop over a training split. Each item gets a fresh
/// SNR, fading coefficient and noise draw.
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub link: Link<'a>,
    train: &'a ImageSet,
    val: ImageSet,
    opt: AdamW,
    snr_rng: StreamRng,
    channel: ChannelRng,
    epoch: u64,
    queue: Vec<Vec<usize>>,
    pub step: usize,
    /// Loss of every optimizer step so far.
    pub losses: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, link: Link<'a>, train: &'a ImageSet, val: &ImageSet) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::EmptyStream("training set has no images".into()));
        }
        let val = if cfg.val_images > 0 && val.len() > cfg.val_images {
            val.take(cfg.val_images)
        } else {
            val.clone()
        };
        let opt = AdamW::new(
            link.codec.store.vars(),
            ParamsAdamW {
                lr: cfg.learning_rate,
                weight_decay: 0.0,
                ..Default::default()
            },
        )?;
        Ok(Self {
            snr_rng: rng::stream(cfg.seed, Stream::Snr),
            channel: ChannelRng::new(cfg.seed),
            cfg,
            link,
            train,
            val,
            opt,
            epoch: 0,
            queue: Vec::new(),
            step: 0,
            losses: Vec::new(),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.cfg.batch_size)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.queue.is_empty() {
            self.queue = shuffled_batches(self.train.len(), self.cfg.batch_size, self.cfg.seed, self.epoch);
            self.queue.reverse();
            self.epoch += 1;
        }
        self.queue.pop().expect("non-empty training set")
    }

    /// One optimizer step; returns the batch loss.
    pub fn step(&mut self, masks: Option<&PruneMasks>, quant: Option<&QuantRuntime>) -> Result<f64> {
        let idx = self.next_batch();
        let x = self.train.batch(&idx, self.link.codec.dtype())?;
        let range = self.cfg.snr_range_db;
        let snr: Vec<f64> = idx.iter().map(|_| sample_snr(range, &mut self.snr_rng)).collect();
        let ctx = ForwardCtx::train().with_quant(quant.cloned());
        let x_hat = self.link.forward(&x, &snr, &mut self.channel, &ctx)?;
        let loss = mse_loss(&x_hat, &x)?;
        let lv = scalar(&loss)?;
        if !lv.is_finite() {
            return Err(Error::Divergence { step: self.step, loss: lv });
        }
        self.opt.backward_step(&loss)?;
        if let Some(m) = masks {
            m.apply(&self.link.codec.store)?;
        }
        self.losses.push(lv);
        self.step += 1;
        Ok(lv)
    }

    /// Mean eval-mode MSE over the validation split on a fixed channel.
    pub fn validate(&self, quant: Option<&QuantRuntime>) -> Result<f64> {
        let set = if self.val.is_empty() { self.train } else { &self.val };
        let mut snr_rng = rng::stream(self.cfg.seed ^ VAL_SEED_OFFSET, Stream::Snr);
        let mut channel = ChannelRng::new(self.cfg.seed ^ VAL_SEED_OFFSET);
        let ctx = ForwardCtx::eval().with_quant(quant.cloned());
        let mut total = 0.0;
        let idx: Vec<usize> = (0..set.len()).collect();
        for chunk in idx.chunks(self.cfg.batch_size) {
            let x = set.batch(chunk, self.link.codec.dtype())?;
            let snr: Vec<f64> = chunk.iter().map(|_| sample_snr(self.cfg.snr_range_db, &mut snr_rng)).collect();
            let x_hat = self.link.forward(&x, &snr, &mut channel, &ctx)?;
            total += scalar(&mse_loss(&x_hat, &x)?)? * chunk.len() as f64;
        }
        Ok(total / set.len() as f64)
    }
}

impl FineTune for Trainer<'_> {
    fn fine_tune(
        &mut self,
        codec: &SwinSitCodec,
        masks: &PruneMasks,
        quant: Option<&QuantRuntime>,
        steps: usize,
    ) -> Result<()> {
        if !std::ptr::eq(codec, self.link.codec) {
            return Err(Error::arg("fine-tuning a codec the trainer does not own"));
        }
        for _ in 0..steps {
            self.step(Some(masks), quant)?;
        }
        Ok(())
    }

    fn calibration_pass(&mut self, codec: &SwinSitCodec, index: usize, ctx: &ForwardCtx) -> Result<()> {
        if !std::ptr::eq(codec, self.link.codec) {
            return Err(Error::arg("calibrating a codec the trainer does not own"));
        }
        let n = self.train.len();
        let b = self.cfg.batch_size.min(n);
        let idx: Vec<usize> = (0..b).map(|j| (index * b + j) % n).collect();
        let x = self.train.batch(&idx, codec.dtype())?;
        let seed = self.cfg.seed ^ CALIB_SEED_OFFSET;
        let mut snr_rng = rng::indexed(seed, Stream::Snr, index as u64);
        let snr: Vec<f64> = idx.iter().map(|_| sample_snr(self.cfg.snr_range_db, &mut snr_rng)).collect();
        self.link.forward(&x, &snr, &mut ChannelRng::indexed(seed, index as u64), ctx)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    /// Per-step training loss.
    pub losses: Vec<f64>,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Validation MSE per epoch.
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Written whenever validation improves.
    pub checkpoint: Option<PathBuf>,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
}

/// Train for `cfg.epochs` epochs and leave the codec at its best
/// validation state.
pub fn train(link: Link<'_>, cfg: &TrainConfig, train_set: &ImageSet, val_set: &ImageSet, opts: &TrainOptions) -> Result<TrainReport> {
    let codec = link.codec;
    let mut t = Trainer::new(cfg.clone(), link, train_set, val_set)?;
    let per_epoch = t.batches_per_epoch();
    let mut report = TrainReport {
        best_val_loss: f64::INFINITY,
        ..TrainReport::default()
    };
    let mut best = None;
    'epochs: for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let mut n = 0;
        for _ in 0..per_epoch {
            if opts.max_steps.is_some_and(|m| t.step >= m) {
                break 'epochs;
            }
            sum += t.step(None, None)?;
            n += 1;
        }
        let v = t.validate(None)?;
        report.epoch_loss.push(sum / n.max(1) as f64);
        report.val_loss.push(v);
        log::info!(
            "epoch {} train {:.5} val {:.5} ({:.2} dB)",
            epoch + 1,
            sum / n.max(1) as f64,
            v,
            crate::metrics::psnr_from_mse(v, 1.0)
        );
        if v < report.best_val_loss {
            report.best_val_loss = v;
            report.best_epoch = epoch;
            best = Some(codec.store.snapshot()?);
            if let Some(p) = &opts.checkpoint {
                checkpoint::save_codec(p, codec)?;
            }
        }
    }
    if let Some(s) = &best {
        codec.store.restore(s)?;
    }
    report.steps = t.step;
    report.losses = std::mem::take(&mut t.losses);
    Ok(report)
}

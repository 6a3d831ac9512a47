//! Synthetic estimate grids, denoiser training and the MSE-vs-SNR bench.

use candle_core::DType;
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dncnn::Denoiser;
use super::estimate::{grids_to_tensor, ml_estimate, tensor_to_grids, EstimateGrid};
use crate::channel::{make_pilots, sample_fading_grid, snr_to_noise_var, transmit};
use crate::error::{Error, Result};
use crate::nn::ForwardCtx;
use crate::rng::{self, Stream, StreamRng};

pub const DEFAULT_PILOT_LEN: usize = 64;
pub const PILOT_SEED: u64 = 0x5157;

/// ML estimates for every cell from its own pilot transmission.
pub fn observe_cells<R: Rng + ?Sized>(
    h: &[Complex64],
    sigma2: &[f64],
    pilots: &[Complex64],
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    if h.len() != sigma2.len() {
        return Err(Error::dim("one noise variance per cell is required"));
    }
    h.iter()
        .zip(sigma2)
        .map(|(&h, &s)| ml_estimate(pilots, &transmit(pilots, h, s, rng)?))
        .collect()
}

/// Paired true and ML-estimated grids.
#[derive(Debug, Clone)]
pub struct GridPair {
    pub truth: EstimateGrid,
    pub noisy: EstimateGrid,
}

/// How SNRs are assigned to the cells of a synthetic grid.
#[derive(Debug, Clone, Copy)]
pub enum SnrDraw {
    Fixed(f64),
    /// Uniform per grid.
    PerGrid(f64, f64),
    /// Uniform per grid or per cell, chosen at random per grid.
    Mixed(f64, f64),
}

pub fn synth_pair<R: Rng + ?Sized>(g: usize, pilots: &[Complex64], draw: SnrDraw, rng: &mut R) -> Result<GridPair> {
    let h = sample_fading_grid(g, rng);
    let n = g * g;
    let sigma2: Vec<f64> = match draw {
        SnrDraw::Fixed(s) => vec![snr_to_noise_var(s); n],
        SnrDraw::PerGrid(lo, hi) => vec![snr_to_noise_var(uniform(rng, lo, hi)); n],
        SnrDraw::Mixed(lo, hi) => {
            if rng.random::<bool>() {
                vec![snr_to_noise_var(uniform(rng, lo, hi)); n]
            } else {
                (0..n).map(|_| snr_to_noise_var(uniform(rng, lo, hi))).collect()
            }
        }
    };
    let est = observe_cells(&h, &sigma2, pilots, rng)?;
    Ok(GridPair {
        truth: EstimateGrid::build(&h, g)?,
        noisy: EstimateGrid::build(&est, g)?,
    })
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Mean squared error per real component.
pub fn grid_mse(a: &[EstimateGrid], b: &[EstimateGrid]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.data.iter().zip(&y.data) {
            s += (p - q).powi(2);
            n += 1;
        }
    }
    s / n.max(1) as f64
}

pub fn refine(denoiser: &Denoiser, grids: &[EstimateGrid]) -> Result<Vec<EstimateGrid>> {
    let x = grids_to_tensor(grids, denoiser.store.device())?;
    tensor_to_grids(&denoiser.forward(&x, &ForwardCtx::eval())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DnCnnTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub snr_range_db: (f64, f64),
    pub pilot_len: usize,
    pub val_grids: usize,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for DnCnnTrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch: 32,
            lr: 1e-3,
            snr_range_db: (1.0, 13.0),
            pilot_len: DEFAULT_PILOT_LEN,
            val_grids: 256,
            eval_every: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DnCnnTrainReport {
    pub ml_val_mse: f64,
    pub best_val_mse: f64,
    pub best_step: usize,
    pub losses: Vec<f64>,
}

/// Minimize `0.5 ||H_Dn - H||_F^2` on fresh synthetic grids; the parameters
/// with the lowest validation MSE are kept.
pub fn train_dncnn(denoiser: &Denoiser, cfg: &DnCnnTrainConfig) -> Result<DnCnnTrainReport> {
    let g = denoiser.config.grid;
    let pilots = make_pilots(cfg.pilot_len, PILOT_SEED)?;
    let (lo, hi) = cfg.snr_range_db;
    let mut val_rng = rng::stream(cfg.seed, Stream::Eval);
    let val: Vec<GridPair> = (0..cfg.val_grids)
        .map(|_| synth_pair(g, &pilots, SnrDraw::Mixed(lo, hi), &mut val_rng))
        .collect::<Result<_>>()?;
    let val_noisy: Vec<EstimateGrid> = val.iter().map(|p| p.noisy.clone()).collect();
    let val_truth: Vec<EstimateGrid> = val.iter().map(|p| p.truth.clone()).collect();
    let ml_val_mse = grid_mse(&val_noisy, &val_truth);

    let mut opt = AdamW::new(
        denoiser.store.vars(),
        ParamsAdamW {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut rng: StreamRng = rng::stream(cfg.seed, Stream::Synthetic);
    let mut best = (f64::INFINITY, 0usize, denoiser.store.snapshot()?);
    let mut losses = Vec::with_capacity(cfg.steps);
    let ctx = ForwardCtx::train();
    let dev = denoiser.store.device().clone();
    for step in 0..=cfg.steps {
        if step % cfg.eval_every.max(1) == 0 || step == cfg.steps {
            let v = grid_mse(&refine(denoiser, &val_noisy)?, &val_truth);
            log::debug!("dncnn step {step}: val mse {v:.3e} (ml {ml_val_mse:.3e})");
            if v < best.0 {
                best = (v, step, denoiser.store.snapshot()?);
            }
        }
        if step == cfg.steps {
            break;
        }
        let batch: Vec<GridPair> = (0..cfg.batch)
            .map(|_| synth_pair(g, &pilots, SnrDraw::Mixed(lo, hi), &mut rng))
            .collect::<Result<_>>()?;
        let noisy: Vec<EstimateGrid> = batch.iter().map(|p| p.noisy.clone()).collect();
        let truth: Vec<EstimateGrid> = batch.iter().map(|p| p.truth.clone()).collect();
        let x = grids_to_tensor(&noisy, &dev)?.to_dtype(denoiser.store.dtype())?;
        let t = grids_to_tensor(&truth, &dev)?.to_dtype(denoiser.store.dtype())?;
        let out = denoiser.net.forward(&x, &ctx)?;
        let loss = ((out - t)?.sqr()?.sum_all()? * (0.5 / cfg.batch as f64))?;
        let lv = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !lv.is_finite() {
            return Err(Error::Divergence { step, loss: lv });
        }
        losses.push(lv);
        opt.backward_step(&loss)?;
    }
    denoiser.store.restore(&best.2)?;
    Ok(DnCnnTrainReport {
        ml_val_mse,
        best_val_mse: best.0,
        best_step: best.1,
        losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub snr_db: f64,
    pub mse_ml: f64,
    pub mse_dncnn: f64,
}

/// Estimation MSE of raw ML and refined estimates at fixed pilot SNRs.
pub fn channel_bench(denoiser: &Denoiser, snr_grid: &[f64], grids: usize, pilot_len: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let g = denoiser.config.grid;
    let pilots = make_pilots(pilot_len, PILOT_SEED)?;
    snr_grid
        .iter()
        .enumerate()
        .map(|(i, &snr)| {
            let mut rng = rng::indexed(seed, Stream::Eval, i as u64);
            let pairs: Vec<GridPair> = (0..grids)
                .map(|_| synth_pair(g, &pilots, SnrDraw::Fixed(snr), &mut rng))
                .collect::<Result<_>>()?;
            let noisy: Vec<EstimateGrid> = pairs.iter().map(|p| p.noisy.clone()).collect();
            let truth: Vec<EstimateGrid> = pairs.iter().map(|p| p.truth.clone()).collect();
            Ok(BenchRow {
                snr_db: snr,
                mse_ml: grid_mse(&noisy, &truth),
                mse_dncnn: grid_mse(&refine(denoiser, &noisy)?, &truth),
            })
        })
        .collect()
}

/// Receiver-side estimator: pilots, ML estimation and optional refinement.
pub struct Estimator<'a> {
    pub pilots: Vec<Complex64>,
    pub denoiser: Option<&'a Denoiser>,
}

impl<'a> Estimator<'a> {
    pub fn new(pilot_len: usize, denoiser: Option<&'a Denoiser>) -> Result<Self> {
        Ok(Self {
            pilots: make_pilots(pilot_len, PILOT_SEED)?,
            denoiser,
        })
    }

    /// Cells per refinement grid, or 1 without a denoiser.
    pub fn block(&self) -> usize {
        self.denoiser.map_or(1, |d| d.config.grid * d.config.grid)
    }

    /// Estimates for consecutive cells; the cell count must be a multiple of
    /// [`Estimator::block`].
    pub fn estimate<R: Rng + ?Sized>(&self, h: &[Complex64], sigma2: &[f64], rng: &mut R) -> Result<Vec<Complex64>> {
        let ml = observe_cells(h, sigma2, &self.pilots, rng)?;
        let Some(d) = self.denoiser else {
            return Ok(ml);
        };
        let block = self.block();
        if ml.len() % block != 0 {
            return Err(Error::dim(format!("{} cells do not fill {block}-cell grids", ml.len())));
        }
        let grids: Vec<EstimateGrid> = ml
            .chunks(block)
            .map(|c| EstimateGrid::build(c, d.config.grid))
            .collect::<Result<_>>()?;
        Ok(refine(d, &grids)?.iter().flat_map(|g| g.unpack()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ceac::dncnn::DnCnnConfig;

    #[test]
    fn untrained_refiner_matches_ml() {
        let d = Denoiser::new(DnCnnConfig::default(), DType::F64, 0).unwrap();
        let rows = channel_bench(&d, &[5.0], 8, 64, 1).unwrap();
        assert!((rows[0].mse_ml - rows[0].mse_dncnn).abs() < 1e-15);
        // ML error per real component is sigma^2 / (2 L_p)
        let want = snr_to_noise_var(5.0) / 128.0;
        assert!((rows[0].mse_ml / want - 1.0).abs() < 0.25);
    }

    #[test]
    fn estimator_block_contract() {
        let d = Denoiser::new(DnCnnConfig { grid: 2, ..DnCnnConfig::default() }, DType::F64, 0).unwrap();
        let est = Estimator::new(16, Some(&d)).unwrap();
        assert_eq!(est.block(), 4);
        let h = vec![Complex64::new(1.0, 0.0); 6];
        let s = vec![0.1; 6];
        let mut rng = rng::stream(0, Stream::Noise);
        assert!(est.estimate(&h, &s, &mut rng).is_err());
        assert_eq!(est.estimate(&h[..4], &s[..4], &mut rng).unwrap().len(), 4);
        let plain = Estimator::new(16, None).unwrap();
        assert_eq!(plain.estimate(&h, &s, &mut rng).unwrap().len(), 6);
    }

    #[test]
    fn short_training_does_not_hurt() {
        let d = Denoiser::new(DnCnnConfig::default(), DType::F32, 0).unwrap();
        let cfg = DnCnnTrainConfig {
            steps: 40,
            batch: 8,
            val_grids: 32,
            eval_every: 20,
            ..Default::default()
        };
        let r = train_dncnn(&d, &cfg).unwrap();
        assert_eq!(r.losses.len(), 40);
        // the best snapshot includes step 0, where the refiner is the identity
        assert!(r.best_val_mse <= r.ml_val_mse * (1.0 + 1e-5));
    }
}

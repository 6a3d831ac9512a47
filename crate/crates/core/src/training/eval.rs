//! Quality-versus-SNR sweeps over fixed channel seeds.

use serde::{Deserialize, Serialize};

use crate::data::ImageSet;
use crate::error::{Error, Result};
use crate::metrics::{ms_ssim_db, ms_ssim_images, psnr_from_mse};
use crate::nn::{to_f64_vec, ForwardCtx, QuantRuntime};
use crate::training::link::{ChannelRng, Link};

/// Test-set averages for one `(snr, seed)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub snr_db: f64,
    pub seed: u64,
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub ms_ssim_db: f64,
    pub mse: f64,
    pub code_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    /// Sorted by SNR, then seed.
    pub rows: Vec<EvalRow>,
}

impl EvalCurve {
    /// Distinct grid SNRs in ascending order.
    pub fn snrs(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.rows.iter().map(|r| r.snr_db).collect();
        s.dedup();
        s
    }

    /// Seed-averaged PSNR per grid SNR.
    pub fn mean_psnr(&self) -> Vec<(f64, f64)> {
        self.mean_of(|r| r.psnr_db)
    }

    pub fn mean_ms_ssim(&self) -> Vec<(f64, f64)> {
        self.mean_of(|r| r.ms_ssim)
    }

    fn mean_of(&self, f: impl Fn(&EvalRow) -> f64) -> Vec<(f64, f64)> {
        self.snrs()
            .into_iter()
            .map(|s| {
                let v: Vec<f64> = self.rows.iter().filter(|r| r.snr_db == s).map(&f).collect();
                (s, v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    }
}

/// Evaluate `link` on `test` at every grid SNR and channel seed. A grid
/// value of `+inf` runs the noiseless channel.
pub fn evaluate(
    link: &Link<'_>,
    test: &ImageSet,
    snr_grid: &[f64],
    seeds: &[u64],
    batch: usize,
    quant: Option<&QuantRuntime>,
) -> Result<EvalCurve> {
    if test.is_empty() {
        return Err(Error::EmptyStream("test set has no images".into()));
    }
    if snr_grid.is_empty() || seeds.is_empty() {
        return Err(Error::arg("SNR grid and seed list must be non-empty"));
    }
    let mut grid = snr_grid.to_vec();
    if grid.iter().any(|s| s.is_nan()) {
        return Err(Error::arg("SNR grid contains NaN"));
    }
    grid.sort_by(f64::total_cmp);
    let rate = link.codec.config.code_rate();
    let ctx = ForwardCtx::eval().with_quant(quant.cloned());
    let idx: Vec<usize> = (0..test.len()).collect();
    let mut rows = Vec::with_capacity(grid.len() * seeds.len());
    for &snr in &grid {
        for &seed in seeds {
            let mut channel = ChannelRng::new(seed);
            let (mut psnr, mut mse, mut ssim) = (0.0, 0.0, 0.0);
            for chunk in idx.chunks(batch.max(1)) {
                let x = test.batch(chunk, link.codec.dtype())?;
                let x_hat = link.forward(&x, &[snr], &mut channel, &ctx)?;
                let (xv, yv) = (to_f64_vec(&x)?, to_f64_vec(&x_hat)?);
                let per = test.pixels();
                for (a, b) in xv.chunks(per).zip(yv.chunks(per)) {
                    let e = crate::metrics::mse(a, b)?;
                    mse += e;
                    psnr += psnr_from_mse(e, 1.0);
                }
                let dims = [chunk.len(), test.height, test.width, 3];
                let (s, _) = ms_ssim_images(&xv, &yv, dims, true)?;
                ssim += s.iter().sum::<f64>();
            }
            let n = test.len() as f64;
            let ms = ssim / n;
            rows.push(EvalRow {
                snr_db: snr,
                seed,
                psnr_db: psnr / n,
                ms_ssim: ms,
                ms_ssim_db: ms_ssim_db(ms.min(1.0 - 1e-12))?,
                mse: mse / n,
                code_rate: rate,
            });
        }
    }
    Ok(EvalCurve { rows })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::arg("spearman needs two equal-length series of at least 2 values"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut num, mut dx, mut dy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        num += (a - mean) * (b - mean);
        dx += (a - mean).powi(2);
        dy += (b - mean).powi(2);
    }
    if dx == 0.0 || dy == 0.0 {
        return Ok(0.0);
    }
    Ok(num / (dx * dy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{ModelConfig, StageConfig, SwinSitCodec};
    use crate::data::synthetic_images;
    use crate::training::config::Variant;
    use candle_core::DType;

    #[test]
    fn spearman_cases() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn grid_cardinality_and_order() {
        let cfg = ModelConfig::new(
            32,
            32,
            StageConfig {
                depths: vec![1, 1],
                channels: vec![8, 16],
                num_heads: vec![2, 2],
                window_size: 4,
                output_channels: 8,
                mlp_ratio: 2,
            },
        );
        let codec = SwinSitCodec::new(cfg, DType::F32, 0).unwrap();
        let link = Link::new(&codec, Variant::Full, None, 16, 2).unwrap();
        let test = synthetic_images(4, 2);
        let curve = evaluate(&link, &test, &[13.0, 1.0, 7.0, 4.0, 10.0], &[0, 1], 4, None).unwrap();
        assert_eq!(curve.rows.len(), 10);
        assert_eq!(curve.snrs(), vec![1.0, 4.0, 7.0, 10.0, 13.0]);
        let again = evaluate(&link, &test, &[1.0, 4.0, 7.0, 10.0, 13.0], &[0, 1], 4, None).unwrap();
        assert_eq!(curve, again);
    }

    #[test]
    fn per_image_metrics_match_direct_computation() {
        let cfg = ModelConfig::new(
            32,
            32,
            StageConfig {
                depths: vec![1, 1],
                channels: vec![8, 16],
                num_heads: vec![2, 2],
                window_size: 4,
                output_channels: 8,
                mlp_ratio: 2,
            },
        );
        let codec = SwinSitCodec::new(cfg, DType::F32, 3).unwrap();
        let link = Link::new(&codec, Variant::NoCeac, None, 16, 2).unwrap();
        let test = synthetic_images(5, 7);
        let curve = evaluate(&link, &test, &[f64::INFINITY], &[0], 2, None).unwrap();
        // same chunks as `evaluate`, so each chunk draws its own fading grid
        let mut rng = ChannelRng::new(0);
        let mut per = Vec::new();
        for chunk in [vec![0, 1], vec![2, 3], vec![4]] {
            let x = test.batch(&chunk, DType::F32).unwrap();
            let y = link.forward(&x, &[f64::INFINITY], &mut rng, &ForwardCtx::eval()).unwrap();
            let (xv, yv) = (to_f64_vec(&x).unwrap(), to_f64_vec(&y).unwrap());
            per.extend(
                xv.chunks(32 * 32 * 3)
                    .zip(yv.chunks(32 * 32 * 3))
                    .map(|(a, b)| crate::metrics::mse(a, b).unwrap()),
            );
        }
        let mse = per.iter().sum::<f64>() / 5.0;
        let psnr = per.iter().map(|&e| psnr_from_mse(e, 1.0)).sum::<f64>() / 5.0;
        assert!((curve.rows[0].mse - mse).abs() < 1e-9 * mse.max(1.0));
        assert!((curve.rows[0].psnr_db - psnr).abs() < 1e-9 * psnr);
    }
}

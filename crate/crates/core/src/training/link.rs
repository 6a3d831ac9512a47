//! Encoder, fading channel, receiver equalization and decoder as one
//! differentiable forward pass.

use candle_core::Tensor;
use num_complex::Complex64;

use crate::ceac::{zf_coefficient, Denoiser, Estimator};
use crate::channel::{sample_fading_grid, snr_to_noise_var, transmit_tensor, ChannelRealization, complex_scale};
use crate::codec::{ComplexSymbols, SwinSitCodec};
use crate::error::{Error, Result};
use crate::nn::ForwardCtx;
use crate::rng::{self, Stream, StreamRng};
use crate::training::config::Variant;

/// Random streams of one channel simulation.
#[derive(Debug, Clone)]
pub struct ChannelRng {
    pub fading: StreamRng,
    pub noise: StreamRng,
}

impl ChannelRng {
    pub fn new(seed: u64) -> Self {
        Self {
            fading: rng::stream(seed, Stream::Fading),
            noise: rng::stream(seed, Stream::Noise),
        }
    }

    pub fn indexed(seed: u64, index: u64) -> Self {
        Self {
            fading: rng::indexed(seed, Stream::Fading, index),
            noise: rng::indexed(seed, Stream::Noise, index),
        }
    }
}

/// One trained system: codec, variant and receiver.
pub struct Link<'a> {
    pub codec: &'a SwinSitCodec,
    pub variant: Variant,
    estimator: Option<Estimator<'a>>,
    grid: usize,
}

impl<'a> Link<'a> {
    /// `denoiser` is used by the full variant only; without one the full
    /// variant equalizes with the raw ML estimates.
    pub fn new(
        codec: &'a SwinSitCodec,
        variant: Variant,
        denoiser: Option<&'a Denoiser>,
        pilot_len: usize,
        fading_grid: usize,
    ) -> Result<Self> {
        if codec.config.snr_aware != variant.snr_aware() {
            return Err(Error::arg(format!(
                "variant {variant} needs a codec with snr_aware = {}",
                variant.snr_aware()
            )));
        }
        if fading_grid == 0 {
            return Err(Error::arg("fading grid side must be positive"));
        }
        let (estimator, grid) = if variant.equalizes() {
            let d = denoiser;
            let grid = d.map_or(fading_grid, |d| d.config.grid);
            (Some(Estimator::new(pilot_len, d)?), grid)
        } else {
            (None, fading_grid)
        };
        Ok(Self {
            codec,
            variant,
            estimator,
            grid,
        })
    }

    /// Trainable parameters of the whole receiver chain, denoiser included.
    pub fn num_params(&self) -> usize {
        self.codec.store.num_params()
            + self
                .estimator
                .as_ref()
                .and_then(|e| e.denoiser)
                .map_or(0, |d| d.store.num_params())
    }

    /// Fading coefficients for `n` consecutive items, drawn grid by grid;
    /// the cells past `n` of the last grid are returned as well.
    fn draw_fading(&self, n: usize, rng: &mut ChannelRng) -> Vec<Complex64> {
        let cells = self.grid * self.grid;
        let grids = n.div_ceil(cells);
        (0..grids).flat_map(|_| sample_fading_grid(self.grid, &mut rng.fading)).collect()
    }

    /// Reconstruct `images` sent at per-item SNRs (`snr_db` has one value
    /// per item or one shared value). `+inf` means a noiseless channel.
    pub fn forward(&self, images: &Tensor, snr_db: &[f64], rng: &mut ChannelRng, ctx: &ForwardCtx) -> Result<Tensor> {
        let b = images.dim(0)?;
        let snr: Vec<f64> = match snr_db.len() {
            1 => vec![snr_db[0]; b],
            n if n == b => snr_db.to_vec(),
            n => return Err(Error::dim(format!("{n} SNR values for {b} images"))),
        };
        if snr.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(Error::arg("SNR must be a number above -inf"));
        }
        let hi = self.codec.config.snr_range_db.1;
        let codec_snr: Vec<f64> = snr.iter().map(|&s| if s.is_finite() { s } else { hi }).collect();
        let sigma2: Vec<f64> = snr.iter().map(|&s| snr_to_noise_var(s)).collect();

        let symbols = self.codec.encode(images, &codec_snr, ctx)?;
        let h = self.draw_fading(b, rng);
        let real: Vec<ChannelRealization> = (0..b)
            .map(|i| ChannelRealization {
                h: h[i],
                sigma2: sigma2[i],
            })
            .collect();
        let mut received = transmit_tensor(&symbols.data, &real, &mut rng.noise)?;
        if let Some(est) = &self.estimator {
            // padding cells repeat the last item's noise level
            let last = *sigma2.last().unwrap_or(&0.0);
            let s2: Vec<f64> = (0..h.len()).map(|i| sigma2.get(i).copied().unwrap_or(last)).collect();
            let h_est = est.estimate(&h, &s2, &mut rng.noise)?;
            let coef: Vec<Complex64> = h_est[..b]
                .iter()
                .map(|&he| match zf_coefficient(he) {
                    Ok(c) => c,
                    Err(e) => {
                        log::warn!("{e}; passing the block through unequalized");
                        Complex64::new(1.0, 0.0)
                    }
                })
                .collect();
            received = complex_scale(&received, &coef)?;
        }
        self.codec.decode(&ComplexSymbols::new(received)?, &codec_snr, ctx)
    }
}

//! Rayleigh slow-fading channel with additive complex Gaussian noise.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use candle_core::{Tensor, D};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Fading coefficient and noise variance for one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRealization {
    pub h: Complex64,
    pub sigma2: f64,
}

/// Noise variance under unit symbol power: `10^(-snr/10)`.
pub fn snr_to_noise_var(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Circularly-symmetric complex Gaussian with `E|z|^2 = var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    Complex64::new(s * a, s * b)
}

/// `h = (a + bi) / sqrt(2)` with `a, b` standard normal.
pub fn sample_rayleigh<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    complex_gaussian(rng, 1.0)
}

pub fn sample_rayleigh_seeded(seed: u64) -> Complex64 {
    sample_rayleigh(&mut rng::stream(seed, Stream::Fading))
}

/// `y_hat = h y + w` with `w_i ~ CN(0, sigma2)`.
pub fn transmit<R: Rng + ?Sized>(y: &[Complex64], h: Complex64, sigma2: f64, rng: &mut R) -> Result<Vec<Complex64>> {
    check_sigma2(sigma2)?;
    Ok(y.iter().map(|&s| h * s + complex_gaussian(rng, sigma2)).collect())
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::arg(format!("noise variance must be finite and >= 0, got {sigma2}")));
    }
    Ok(())
}

/// Unit-magnitude QPSK pilots, reproducible from `seed`.
pub fn make_pilots(len: usize, seed: u64) -> Result<Vec<Complex64>> {
    if len < 1 {
        return Err(Error::arg("pilot length must be at least 1"));
    }
    let mut rng = rng::stream(seed, Stream::Pilots);
    Ok((0..len)
        .map(|_| {
            let re = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let im = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            Complex64::new(re, im)
        })
        .collect())
}

/// Plane-wave components of a correlated fading field.
pub const FIELD_WAVES: usize = 16;
/// Largest spatial frequency of a field component, in cycles per cell.
pub const FIELD_MAX_FREQ: f64 = 0.08;

/// `g x g` row-major grid of fading coefficients for consecutive blocks.
///
/// Each cell is a sum of `FIELD_WAVES` independent `CN(0, 1/P)` amplitudes
/// times unit phasors, so every cell is exactly `CN(0, 1)` (Rayleigh
/// magnitude) while neighbouring cells are strongly correlated.
pub fn sample_fading_grid<R: Rng + ?Sized>(g: usize, rng: &mut R) -> Vec<Complex64> {
    let p = FIELD_WAVES;
    let waves: Vec<(Complex64, f64, f64)> = (0..p)
        .map(|_| {
            let a = complex_gaussian(rng, 1.0 / p as f64);
            let fr = rng.random_range(-FIELD_MAX_FREQ..=FIELD_MAX_FREQ);
            let fc = rng.random_range(-FIELD_MAX_FREQ..=FIELD_MAX_FREQ);
            (a, fr, fc)
        })
        .collect();
    let mut out = Vec::with_capacity(g * g);
    for r in 0..g {
        for c in 0..g {
            let z: Complex64 = waves
                .iter()
                .map(|(a, fr, fc)| a * Complex64::from_polar(1.0, 2.0 * PI * (fr * r as f64 + fc * c as f64)))
                .sum();
            out.push(z);
        }
    }
    out
}

/// Multiply each item of a `[B, k, 2]` symbol tensor by its own complex
/// coefficient. Differentiable in the symbols.
pub fn complex_scale(symbols: &Tensor, coef: &[Complex64]) -> Result<Tensor> {
    let (b, _, two) = symbols.dims3()?;
    if two != 2 || coef.len() != b {
        return Err(Error::dim(format!("{} coefficients for {b} items", coef.len())));
    }
    let re: Vec<f64> = coef.iter().map(|c| c.re).collect();
    let im: Vec<f64> = coef.iter().map(|c| c.im).collect();
    let dev = symbols.device();
    let dt = symbols.dtype();
    let cr = Tensor::from_vec(re, (b, 1, 1), dev)?.to_dtype(dt)?;
    let ci = Tensor::from_vec(im, (b, 1, 1), dev)?.to_dtype(dt)?;
    let x = symbols.narrow(D::Minus1, 0, 1)?;
    let y = symbols.narrow(D::Minus1, 1, 1)?;
    let out_re = (x.broadcast_mul(&cr)? - y.broadcast_mul(&ci)?)?;
    let out_im = (x.broadcast_mul(&ci)? + y.broadcast_mul(&cr)?)?;
    Ok(Tensor::cat(&[&out_re, &out_im], D::Minus1)?)
}

/// Tensor version of [`transmit`] with one realization per item. The draw
/// is a constant of the graph, so gradients reach the symbols.
pub fn transmit_tensor<R: Rng + ?Sized>(
    symbols: &Tensor,
    realizations: &[ChannelRealization],
    rng: &mut R,
) -> Result<Tensor> {
    let (b, k, _) = symbols.dims3()?;
    if realizations.len() != b {
        return Err(Error::dim(format!("{} realizations for {b} items", realizations.len())));
    }
    let mut noise = Vec::with_capacity(b * k * 2);
    for r in realizations {
        check_sigma2(r.sigma2)?;
        for _ in 0..k {
            let w = complex_gaussian(rng, r.sigma2);
            noise.push(w.re);
            noise.push(w.im);
        }
    }
    let hs: Vec<Complex64> = realizations.iter().map(|r| r.h).collect();
    let w = Tensor::from_vec(noise, (b, k, 2), symbols.device())?.to_dtype(symbols.dtype())?;
    Ok((complex_scale(symbols, &hs)? + w)?)
}

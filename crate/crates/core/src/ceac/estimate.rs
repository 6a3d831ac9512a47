use candle_core::{Device, Tensor};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::nn::to_f64_vec;

/// Smallest estimate magnitude the equalizer will invert.
pub const DEEP_FADE: f64 = 1e-8;

/// `h_ml = y_p^H y_r / y_p^H y_p`.
pub fn ml_estimate(pilots: &[Complex64], received: &[Complex64]) -> Result<Complex64> {
    if pilots.len() != received.len() {
        return Err(Error::dim(format!(
            "{} pilots but {} received symbols",
            pilots.len(),
            received.len()
        )));
    }
    let energy: f64 = pilots.iter().map(|p| p.norm_sqr()).sum();
    if !(energy > 0.0) {
        return Err(Error::DegeneratePilot);
    }
    let corr: Complex64 = pilots.iter().zip(received).map(|(p, r)| p.conj() * r).sum();
    Ok(corr / energy)
}

/// Zero-forcing compensation `conj(h) / |h|^2 * y`.
pub fn equalize(received: &[Complex64], h_est: Complex64) -> Result<Vec<Complex64>> {
    let inv = zf_coefficient(h_est)?;
    Ok(received.iter().map(|y| inv * y).collect())
}

pub fn zf_coefficient(h_est: Complex64) -> Result<Complex64> {
    let m = h_est.norm();
    if !(m >= DEEP_FADE) {
        return Err(Error::DeepFade { magnitude: m });
    }
    Ok(h_est.conj() / h_est.norm_sqr())
}

/// `G x G` block estimates as real/imaginary planes, stored `[G, G, 2]`
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateGrid {
    pub side: usize,
    pub data: Vec<f64>,
}

impl EstimateGrid {
    pub fn build(estimates: &[Complex64], side: usize) -> Result<Self> {
        if side == 0 || estimates.len() != side * side {
            return Err(Error::dim(format!(
                "{} estimates cannot fill a {side}x{side} grid",
                estimates.len()
            )));
        }
        Ok(Self {
            side,
            data: estimates.iter().flat_map(|z| [z.re, z.im]).collect(),
        })
    }

    pub fn unpack(&self) -> Vec<Complex64> {
        self.data.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect()
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        let i = 2 * (row * self.side + col);
        Complex64::new(self.data[i], self.data[i + 1])
    }
}

/// Stack grids into an `[N, 2, G, G]` network input.
pub fn grids_to_tensor(grids: &[EstimateGrid], device: &Device) -> Result<Tensor> {
    let side = grids.first().map_or(0, |g| g.side);
    if grids.is_empty() || grids.iter().any(|g| g.side != side) {
        return Err(Error::dim("grids must be non-empty and of equal size"));
    }
    let flat: Vec<f64> = grids.iter().flat_map(|g| g.data.iter().copied()).collect();
    Ok(Tensor::from_vec(flat, (grids.len(), side, side, 2), device)?
        .permute((0, 3, 1, 2))?
        .contiguous()?)
}

pub fn tensor_to_grids(t: &Tensor) -> Result<Vec<EstimateGrid>> {
    let (n, two, side, side2) = t.dims4()?;
    if two != 2 || side != side2 {
        return Err(Error::dim(format!("expected [N, 2, G, G], got {:?}", t.dims())));
    }
    let v = to_f64_vec(&t.permute((0, 2, 3, 1))?.contiguous()?)?;
    Ok(v.chunks(2 * side * side)
        .take(n)
        .map(|c| EstimateGrid { side, data: c.to_vec() })
        .collect())
}

/// `0.5 ||a - b||_F^2`.
pub fn dncnn_loss(a: &EstimateGrid, b: &EstimateGrid) -> Result<f64> {
    if a.side != b.side {
        return Err(Error::dim(format!("grid sides {} and {} differ", a.side, b.side)));
    }
    Ok(0.5 * a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{complex_gaussian, make_pilots, snr_to_noise_var, transmit};
    use crate::rng::{self, Stream};

    #[test]
    fn noiseless_estimate_is_exact() {
        let p = make_pilots(64, 1).unwrap();
        let h = Complex64::new(-0.3, 1.1);
        let r: Vec<Complex64> = p.iter().map(|x| h * x).collect();
        assert!((ml_estimate(&p, &r).unwrap() - h).norm() < 1e-14);
        let scaled: Vec<Complex64> = r.iter().map(|x| x * 2.5).collect();
        assert!((ml_estimate(&p, &scaled).unwrap() - 2.5 * h).norm() < 1e-14);
    }

    #[test]
    fn estimator_errors() {
        let z = vec![Complex64::new(0.0, 0.0); 4];
        assert!(matches!(ml_estimate(&z, &z), Err(Error::DegeneratePilot)));
        assert!(matches!(ml_estimate(&z[..2], &z), Err(Error::Dimension(_))));
    }

    #[test]
    fn estimator_statistics() {
        let p = make_pilots(64, 2).unwrap();
        let h = Complex64::new(0.7, -0.4);
        let sigma2 = snr_to_noise_var(5.0);
        let mut rng = rng::stream(3, Stream::Noise);
        let n = 10_000;
        let est: Vec<Complex64> = (0..n)
            .map(|_| ml_estimate(&p, &transmit(&p, h, sigma2, &mut rng).unwrap()).unwrap())
            .collect();
        let mean: Complex64 = est.iter().sum::<Complex64>() / n as f64;
        let var = est.iter().map(|e| (e - mean).norm_sqr()).sum::<f64>() / (n - 1) as f64;
        let want = sigma2 / 64.0;
        assert!((mean - h).norm() < 3.0 * (want / n as f64).sqrt() * 1.5);
        assert!((var / want - 1.0).abs() < 0.1);
    }

    #[test]
    fn equalizer_cases() {
        let y = vec![Complex64::new(0.6, 0.8), Complex64::new(0.0, -1.0)];
        let h = Complex64::new(0.2, -0.9);
        let r: Vec<Complex64> = y.iter().map(|s| h * s).collect();
        let e = equalize(&r, h).unwrap();
        for (a, b) in e.iter().zip(&y) {
            assert!((a - b).norm() < 1e-15);
            assert!((a.arg() - b.arg()).abs() < 1e-12);
        }
        let half = equalize(&y, Complex64::new(2.0, 0.0)).unwrap();
        for (a, b) in half.iter().zip(&y) {
            assert!((a.norm() - b.norm() / 2.0).abs() < 1e-15);
        }
        assert!(matches!(equalize(&y, Complex64::new(1e-9, 0.0)), Err(Error::DeepFade { .. })));
    }

    #[test]
    fn grid_packing() {
        let g = EstimateGrid::build(&[Complex64::new(2.0, 3.0)], 1).unwrap();
        assert_eq!(g.data, vec![2.0, 3.0]);
        let mut rng = rng::stream(0, Stream::Fading);
        let e: Vec<Complex64> = (0..4).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let g = EstimateGrid::build(&e, 2).unwrap();
        assert_eq!(g.unpack(), e);
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(g.get(r, c), e[r * 2 + c]);
                assert_eq!(g.data[4 * r + 2 * c], e[r * 2 + c].re);
                assert_eq!(g.data[4 * r + 2 * c + 1], e[r * 2 + c].im);
            }
        }
        assert!(EstimateGrid::build(&e, 3).is_err());
        let t = grids_to_tensor(&[g.clone(), g.clone()], &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[2, 2, 2, 2]);
        // plane 0 holds the real parts
        let v = to_f64_vec(&t.get(0).unwrap().get(0).unwrap()).unwrap();
        assert_eq!(v, e.iter().map(|z| z.re).collect::<Vec<_>>());
        assert_eq!(tensor_to_grids(&t).unwrap(), vec![g.clone(), g]);
    }

    #[test]
    fn loss_cases() {
        let a = EstimateGrid::build(&[Complex64::new(1.0, 2.0); 4], 2).unwrap();
        assert_eq!(dncnn_loss(&a, &a).unwrap(), 0.0);
        let b = EstimateGrid::build(&[Complex64::new(2.0, 3.0); 4], 2).unwrap();
        assert_eq!(dncnn_loss(&a, &b).unwrap(), 4.0);
        let c = EstimateGrid::build(&[Complex64::new(0.0, 0.0)], 1).unwrap();
        assert!(dncnn_loss(&a, &c).is_err());
    }
}

//! Distortion and quality metrics on `[batch, H, W, 3]` images in [0, 1].

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::to_f64_vec;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Smallest side supporting the full five-scale pyramid with an 11-tap window.
pub const FULL_PYRAMID_SIDE: usize = (WINDOW - 1) * 16 + 1;
/// Smallest side of the coarsest scale in the reduced pyramid.
const MIN_COARSE_SIDE: usize = 8;

/// `(1/n) sum (x - x_hat)^2`.
pub fn mse(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim(format!("lengths {} and {} differ", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::dim("empty input"));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64)
}

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse < 1e-10 {
        return PSNR_CAP_DB;
    }
    (10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr(x: &[f64], y: &[f64], max_val: f64) -> Result<f64> {
    if !(max_val > 0.0) {
        return Err(Error::arg(format!("max_val must be positive, got {max_val}")));
    }
    Ok(psnr_from_mse(mse(x, y)?, max_val))
}

/// `-10 log10(1 - v)`, capped at 100 dB.
pub fn ms_ssim_db(v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::arg(format!("MS-SSIM must be in [0, 1], got {v}")));
    }
    if v >= 1.0 - 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * (1.0 - v).log10()).min(PSNR_CAP_DB))
}

/// `R = k / n`.
pub fn code_rate(n: usize, k: usize) -> Result<f64> {
    if n == 0 || k == 0 || k > n {
        return Err(Error::arg(format!("code rate needs 0 < k <= n, got k={k}, n={n}")));
    }
    Ok(k as f64 / n as f64)
}

/// Single-channel plane, row-major.
#[derive(Debug, Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn downsample(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut v = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let at = |dr: usize, dc: usize| self.v[(2 * r + dr) * self.w + 2 * c + dc];
                v.push(0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)));
            }
        }
        Plane { h, w, v }
    }

    fn mul(&self, o: &Plane) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            v: self.v.iter().zip(&o.v).map(|(a, b)| a * b).collect(),
        }
    }
}

fn gaussian(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|x| x / s).collect()
}

/// Separable "valid" filtering.
fn filter(p: &Plane, g: &[f64]) -> Plane {
    let k = g.len();
    let ow = p.w + 1 - k;
    let oh = p.h + 1 - k;
    let mut tmp = vec![0.0; p.h * ow];
    for r in 0..p.h {
        for c in 0..ow {
            tmp[r * ow + c] = (0..k).map(|i| g[i] * p.v[r * p.w + c + i]).sum();
        }
    }
    let mut v = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            v[r * ow + c] = (0..k).map(|i| g[i] * tmp[(r + i) * ow + c]).sum();
        }
    }
    Plane { h: oh, w: ow, v }
}

/// Mean SSIM and mean contrast-structure term of one scale.
fn ssim_cs(x: &Plane, y: &Plane, window: usize, max_val: f64) -> (f64, f64) {
    let g = gaussian(window, SIGMA * window as f64 / WINDOW as f64);
    let c1 = (K1 * max_val).powi(2);
    let c2 = (K2 * max_val).powi(2);
    let mx = filter(x, &g);
    let my = filter(y, &g);
    let sxx = filter(&x.mul(x), &g);
    let syy = filter(&y.mul(y), &g);
    let sxy = filter(&x.mul(y), &g);
    let n = mx.v.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.v.len() {
        let (a, b) = (mx.v[i], my.v[i]);
        let vx = sxx.v[i] - a * a;
        let vy = syy.v[i] - b * b;
        let cov = sxy.v[i] - a * b;
        let csi = (2.0 * cov + c2) / (vx + vy + c2);
        cs += csi;
        ssim += (2.0 * a * b + c1) / (a * a + b * b + c1) * csi;
    }
    (ssim / n, cs / n)
}

/// Pyramid depth and weights used for an image of the given size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsSsimPlan {
    pub weights: Vec<f64>,
    pub reduced: bool,
}

impl MsSsimPlan {
    /// Full five scales when the image allows it; otherwise, if `fallback`,
    /// the deepest pyramid whose coarsest side is at least 8, with the
    /// leading standard weights renormalized and the window clipped to the
    /// side.
    pub fn for_size(h: usize, w: usize, fallback: bool) -> Result<Self> {
        let side = h.min(w);
        if side >= FULL_PYRAMID_SIDE {
            return Ok(Self {
                weights: MS_SSIM_WEIGHTS.to_vec(),
                reduced: false,
            });
        }
        if !fallback {
            return Err(Error::arg(format!(
                "MS-SSIM needs sides >= {FULL_PYRAMID_SIDE}, got {h}x{w}"
            )));
        }
        let scales = (1..=5).rev().find(|s| side >> (s - 1) >= MIN_COARSE_SIDE).ok_or_else(|| {
            Error::arg(format!("image {h}x{w} is too small for MS-SSIM"))
        })?;
        let total: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
        Ok(Self {
            weights: MS_SSIM_WEIGHTS[..scales].iter().map(|w| w / total).collect(),
            reduced: true,
        })
    }
}

fn ms_ssim_plane(x: Plane, y: Plane, plan: &MsSsimPlan, max_val: f64) -> f64 {
    let m = plan.weights.len();
    let (mut x, mut y) = (x, y);
    let mut out = 1.0;
    for (j, wj) in plan.weights.iter().enumerate() {
        let side = x.h.min(x.w);
        let window = if side >= WINDOW { WINDOW } else if side % 2 == 1 { side } else { side - 1 };
        let (ssim, cs) = ssim_cs(&x, &y, window, max_val);
        let term = if j + 1 == m { ssim } else { cs };
        out *= term.max(0.0).powf(*wj);
        if j + 1 < m {
            x = x.downsample();
            y = y.downsample();
        }
    }
    out
}

/// Per-image MS-SSIM (channels averaged) for `[B, H, W, C]` host data.
pub fn ms_ssim_images(x: &[f64], y: &[f64], dims: [usize; 4], fallback: bool) -> Result<(Vec<f64>, MsSsimPlan)> {
    let [b, h, w, c] = dims;
    if x.len() != b * h * w * c || y.len() != x.len() {
        return Err(Error::dim(format!("data does not match dims {dims:?}")));
    }
    let plan = MsSsimPlan::for_size(h, w, fallback)?;
    let plane = |data: &[f64], item: usize, ch: usize| Plane {
        h,
        w,
        v: (0..h * w).map(|p| data[(item * h * w + p) * c + ch]).collect(),
    };
    let vals = (0..b)
        .map(|i| (0..c).map(|ch| ms_ssim_plane(plane(x, i, ch), plane(y, i, ch), &plan, 1.0)).sum::<f64>() / c as f64)
        .collect();
    Ok((vals, plan))
}

fn host_images(t: &Tensor) -> Result<(Vec<f64>, [usize; 4])> {
    let (b, h, w, c) = t.dims4()?;
    Ok((to_f64_vec(t)?, [b, h, w, c]))
}

/// Mean MS-SSIM over a batch, with the reduced pyramid allowed.
pub fn ms_ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    let (xv, d) = host_images(x)?;
    let (yv, dy) = host_images(y)?;
    if d != dy {
        return Err(Error::dim(format!("shapes {d:?} and {dy:?} differ")));
    }
    let (v, _) = ms_ssim_images(&xv, &yv, d, true)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-image PSNR with `max_val = 1`.
pub fn psnr_images(x: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
    let (xv, d) = host_images(x)?;
    let (yv, dy) = host_images(y)?;
    if d != dy {
        return Err(Error::dim(format!("shapes {d:?} and {dy:?} differ")));
    }
    let per = d[1] * d[2] * d[3];
    xv.chunks(per).zip(yv.chunks(per)).map(|(a, b)| psnr(a, b, 1.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub ms_ssim_db: f64,
    pub mse: f64,
    pub code_rate: f64,
}

impl QualityReport {
    /// Batch means of per-image metrics.
    pub fn measure(x: &Tensor, y: &Tensor, code_rate: f64) -> Result<Self> {
        let (xv, d) = host_images(x)?;
        let (yv, dy) = host_images(y)?;
        if d != dy {
            return Err(Error::dim(format!("shapes {d:?} and {dy:?} differ")));
        }
        let per = d[1] * d[2] * d[3];
        let b = d[0] as f64;
        let mut m = 0.0;
        let mut p = 0.0;
        for (a, c) in xv.chunks(per).zip(yv.chunks(per)) {
            let e = mse(a, c)?;
            m += e;
            p += psnr_from_mse(e, 1.0);
        }
        let (s, _) = ms_ssim_images(&xv, &yv, d, true)?;
        let s = s.iter().sum::<f64>() / b;
        Ok(Self {
            psnr_db: p / b,
            ms_ssim: s,
            ms_ssim_db: ms_ssim_db(s.clamp(0.0, 1.0))?,
            mse: m / b,
            code_rate,
        })
    }
}

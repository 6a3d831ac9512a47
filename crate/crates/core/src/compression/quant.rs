//! Affine integer quantization of weights and activations.
//!
//! Weights map `[min, max]` onto `[0, 2^m_q - 1]` with one scale per tensor.
//! Activations use ranges smoothed by an exponential moving average over
//! calibration batches and are clamped into the representable range.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_BITS: u32 = 2;
pub const MAX_BITS: u32 = 32;

/// Integer grid for `bits`-bit codes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantScheme {
    pub bits: u32,
}

impl QuantScheme {
    pub fn new(bits: u32) -> Result<Self> {
        if !(MIN_BITS..=MAX_BITS).contains(&bits) {
            return Err(Error::arg(format!(
                "quantization bits must be in [{MIN_BITS}, {MAX_BITS}], got {bits}"
            )));
        }
        Ok(Self { bits })
    }

    /// `T = 2^m_q - 1`, the largest code.
    pub fn max_code(&self) -> f64 {
        max_code(self.bits)
    }

    /// Bits of the integer accumulator used for products of two codes.
    pub fn accumulator_bits(&self) -> u32 {
        (4 * self.bits).next_power_of_two().max(32)
    }
}

pub fn max_code(bits: u32) -> f64 {
    2f64.powi(bits as i32) - 1.0
}

/// Per-tensor quantized weights. `alpha` is `None` for a constant tensor,
/// which is stored as its offset alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub codes: Vec<u32>,
    pub alpha: Option<f64>,
    pub w_min: f64,
    pub bits: u32,
}

impl QuantizedTensor {
    pub fn dequantize(&self) -> Vec<f64> {
        match self.alpha {
            Some(a) => self.codes.iter().map(|&q| q as f64 / a + self.w_min).collect(),
            None => vec![self.w_min; self.codes.len()],
        }
    }

    /// Worst-case round-trip error, half a quantization step.
    pub fn half_step(&self) -> f64 {
        self.alpha.map_or(0.0, |a| 0.5 / a)
    }
}

/// `alpha_w = (2^m_q - 1) / (max - min)`; `q = round(alpha_w (w - min))`.
pub fn quantize_weights(w: &[f64], bits: u32) -> Result<QuantizedTensor> {
    let scheme = QuantScheme::new(bits)?;
    if w.is_empty() {
        return Err(Error::arg("cannot quantize an empty tensor"));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("cannot quantize non-finite weights"));
    }
    let (lo, hi) = min_max(w);
    if hi <= lo {
        return Ok(QuantizedTensor {
            codes: vec![0; w.len()],
            alpha: None,
            w_min: lo,
            bits,
        });
    }
    let t = scheme.max_code();
    let alpha = t / (hi - lo);
    let codes = w
        .iter()
        .map(|&v| (alpha * (v - lo)).round().clamp(0.0, t) as u32)
        .collect();
    Ok(QuantizedTensor {
        codes,
        alpha: Some(alpha),
        w_min: lo,
        bits,
    })
}

/// EMA-smoothed activation range of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationRangeState {
    pub a_min: f64,
    pub a_max: f64,
    pub initialized: bool,
}

impl Default for ActivationRangeState {
    fn default() -> Self {
        Self {
            a_min: 0.0,
            a_max: 0.0,
            initialized: false,
        }
    }
}

impl ActivationRangeState {
    pub fn from_extremes(a_min: f64, a_max: f64) -> Self {
        Self {
            a_min,
            a_max,
            initialized: true,
        }
    }

    pub fn is_calibrated(&self) -> bool {
        self.initialized && self.a_max > self.a_min
    }

    /// Calibrated on a layer whose input never varied; every value maps to
    /// the offset `a_min`.
    pub fn is_constant(&self) -> bool {
        self.initialized && self.a_max == self.a_min
    }

    /// `alpha_a = (2^m_q - 1) / (a_max - a_min)`.
    pub fn alpha(&self, bits: u32) -> Result<f64> {
        if !self.is_calibrated() {
            return Err(Error::Precondition(format!(
                "activation range not calibrated (a_min = {}, a_max = {})",
                self.a_min, self.a_max
            )));
        }
        Ok(max_code(bits) / (self.a_max - self.a_min))
    }
}

/// One EMA step from a batch's extremes. A fresh state adopts the extremes.
pub fn update_activation_range_extremes(
    state: ActivationRangeState,
    batch_min: f64,
    batch_max: f64,
    beta: f64,
) -> Result<ActivationRangeState> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::arg(format!("beta must be in [0, 1], got {beta}")));
    }
    if !state.initialized {
        return Ok(ActivationRangeState::from_extremes(batch_min, batch_max));
    }
    Ok(ActivationRangeState {
        a_min: (1.0 - beta) * state.a_min + beta * batch_min,
        a_max: (1.0 - beta) * state.a_max + beta * batch_max,
        initialized: true,
    })
}

pub fn update_activation_range(
    state: ActivationRangeState,
    batch: &[f64],
    beta: f64,
) -> Result<ActivationRangeState> {
    if batch.is_empty() {
        return Err(Error::arg("empty activation batch"));
    }
    let (lo, hi) = min_max(batch);
    update_activation_range_extremes(state, lo, hi, beta)
}

/// `clamp(x; -T, T) = min(max(x, -T), T)`.
pub fn clamp_symmetric(x: f64, t: f64) -> f64 {
    x.max(-t).min(t)
}

/// Integer activation codes. After the affine map the codes are clamped to
/// `[0, T]`, the same unsigned grid the weights use.
pub fn quantize_activations(a: &[f64], state: &ActivationRangeState, bits: u32) -> Result<Vec<i64>> {
    let scheme = QuantScheme::new(bits)?;
    if state.is_constant() {
        return Ok(vec![0; a.len()]);
    }
    let alpha = state.alpha(bits)?;
    let t = scheme.max_code();
    Ok(a
        .iter()
        .map(|&v| clamp_symmetric((alpha * (v - state.a_min)).round(), t).max(0.0) as i64)
        .collect())
}

pub fn dequantize_activations(codes: &[i64], state: &ActivationRangeState, bits: u32) -> Result<Vec<f64>> {
    if state.is_constant() {
        return Ok(vec![state.a_min; codes.len()]);
    }
    let alpha = state.alpha(bits)?;
    Ok(codes.iter().map(|&q| q as f64 / alpha + state.a_min).collect())
}

/// Dense layer evaluated on integer codes: `y = W x` with both operands
/// dequantized analytically, the code products summed in a wide accumulator.
///
/// `w` is row-major `[out, in]`, `x` is one input vector of length `in`.
pub fn integer_matvec(
    w: &QuantizedTensor,
    out_dim: usize,
    x_codes: &[i64],
    x_state: &ActivationRangeState,
    bits: u32,
) -> Result<Vec<f64>> {
    let in_dim = x_codes.len();
    if w.codes.len() != out_dim * in_dim {
        return Err(Error::dim(format!(
            "weight has {} codes, expected {out_dim}x{in_dim}",
            w.codes.len()
        )));
    }
    let alpha_w = w
        .alpha
        .ok_or_else(|| Error::Precondition("constant weight tensor has no scale".into()))?;
    let alpha_x = x_state.alpha(bits)?;
    let acc_bits = QuantScheme::new(bits)?.accumulator_bits();
    let sum_x: i64 = x_codes.iter().sum();
    let mut out = Vec::with_capacity(out_dim);
    for row in w.codes.chunks_exact(in_dim) {
        let (dot, sum_w) = if acc_bits <= 32 {
            let mut acc: i32 = 0;
            let mut sw: i32 = 0;
            for (&qw, &qx) in row.iter().zip(x_codes) {
                acc = acc
                    .checked_add(qw as i32 * qx as i32)
                    .ok_or_else(|| Error::Precondition("32-bit accumulator overflow".into()))?;
                sw += qw as i32;
            }
            (acc as i128, sw as i128)
        } else {
            let mut acc: i128 = 0;
            let mut sw: i128 = 0;
            for (&qw, &qx) in row.iter().zip(x_codes) {
                acc += qw as i128 * qx as i128;
                sw += qw as i128;
            }
            (acc, sw)
        };
        let n = in_dim as f64;
        let y = dot as f64 / (alpha_w * alpha_x)
            + w.w_min * sum_x as f64 / alpha_x
            + x_state.a_min * sum_w as f64 / alpha_w
            + n * x_state.a_min * w.w_min;
        out.push(y);
    }
    Ok(out)
}

/// Quantize-dequantize of a weight tensor with a straight-through gradient.
/// Entries that are exactly zero (pruned) stay zero and do not enter the
/// range.
pub fn fake_quantize_weights(w: &Tensor, bits: u32) -> Result<Tensor> {
    let vals = crate::nn::to_f64_vec(w)?;
    let kept: Vec<f64> = vals.iter().copied().filter(|v| *v != 0.0).collect();
    if kept.is_empty() {
        return Ok(w.clone());
    }
    let (lo, hi) = min_max(&kept);
    if hi <= lo {
        return Ok(w.clone());
    }
    let t = max_code(bits);
    let alpha = t / (hi - lo);
    let deq = ((w.affine(alpha, -alpha * lo)?.round()?.clamp(0.0, t)? / alpha)? + lo)?;
    let deq = if kept.len() < vals.len() {
        let keep = w.ne(0.0)?.to_dtype(w.dtype())?;
        (deq * keep)?
    } else {
        deq
    };
    Ok((w + (deq - w)?.detach())?)
}

/// Quantize-dequantize of activations with the straight-through estimator:
/// identity gradient inside `[a_min, a_max]`, zero outside.
pub fn fake_quantize_activations(x: &Tensor, range: &ActivationRangeState, bits: u32) -> Result<Tensor> {
    if range.is_constant() {
        return Ok(x.clamp(range.a_min, range.a_max)?);
    }
    let alpha = range.alpha(bits)?;
    let xc = x.clamp(range.a_min, range.a_max)?;
    let deq = ((xc.affine(alpha, -alpha * range.a_min)?.round()? / alpha)? + range.a_min)?;
    Ok((&xc + (deq - &xc)?.detach())?)
}

pub(crate) fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

use candle_core::Tensor;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::nn::to_f64_vec;

/// Batch of complex channel symbols stored as a real `[batch, k, 2]` tensor
/// (last axis = real, imaginary).
#[derive(Debug, Clone)]
pub struct ComplexSymbols {
    pub data: Tensor,
}

impl ComplexSymbols {
    pub fn new(data: Tensor) -> Result<Self> {
        let (_, _, two) = data.dims3()?;
        if two != 2 {
            return Err(Error::dim(format!("symbol tensor needs a last axis of 2, got {two}")));
        }
        Ok(Self { data })
    }

    pub fn batch(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn k(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn to_complex(&self) -> Result<Vec<Vec<Complex64>>> {
        let v = to_f64_vec(&self.data)?;
        let k = self.k();
        Ok(v.chunks(2 * k)
            .map(|item| item.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect())
            .collect())
    }

    pub fn from_complex(items: &[Vec<Complex64>], like: &Tensor) -> Result<Self> {
        let k = items.first().map_or(0, |v| v.len());
        if items.iter().any(|v| v.len() != k) {
            return Err(Error::dim("ragged symbol batch"));
        }
        let flat: Vec<f64> = items.iter().flatten().flat_map(|z| [z.re, z.im]).collect();
        let t = Tensor::from_vec(flat, (items.len(), k, 2), like.device())?.to_dtype(like.dtype())?;
        Self::new(t)
    }

    /// Mean `|y_i|^2` per batch item.
    pub fn average_power(&self) -> Result<Vec<f64>> {
        let k = self.k() as f64;
        Ok(to_f64_vec(&self.data.sqr()?.sum((1, 2))?)?.into_iter().map(|p| p / k).collect())
    }
}

/// Pair consecutive reals of each item into complex symbols and scale every
/// item to unit average power.
pub fn power_normalize(real: &Tensor) -> Result<ComplexSymbols> {
    let b = real.dim(0)?;
    let n = real.elem_count() / b.max(1);
    if n == 0 || n % 2 != 0 {
        return Err(Error::dim(format!("{n} reals per item cannot form complex pairs")));
    }
    let k = n / 2;
    let z = real.reshape((b, k, 2))?;
    let energy = z.sqr()?.sum_keepdim((1, 2))?;
    for (item, e) in to_f64_vec(&energy)?.iter().enumerate() {
        if *e == 0.0 || !e.is_finite() {
            return Err(Error::DegeneratePower { item });
        }
    }
    let scale = (energy / k as f64)?.sqrt()?;
    ComplexSymbols::new(z.broadcast_div(&scale)?)
}

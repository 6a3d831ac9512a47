//! Residual convolutional denoiser for grids of channel estimates.

use candle_core::{DType, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Builder, ForwardCtx, Init, ParamKind, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DnCnnConfig {
    /// Total convolution layers including the first and last.
    pub depth: usize,
    pub features: usize,
    /// Grid side `G`.
    pub grid: usize,
}

impl Default for DnCnnConfig {
    fn default() -> Self {
        Self {
            depth: 8,
            features: 32,
            grid: 8,
        }
    }
}

#[derive(Debug, Clone)]
struct Conv3 {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Conv3 {
    fn new(b: &mut Builder<'_>, cin: usize, cout: usize, bias: bool, init: Init) -> Result<Self> {
        Ok(Self {
            weight: b.param("weight", &[cout, cin, 3, 3], init, ParamKind::ConvWeight)?,
            bias: if bias {
                Some(b.param("bias", &[cout], Init::Zeros, ParamKind::Bias)?)
            } else {
                None
            },
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, 1, 1, 1, 1)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, (), 1, 1))?)?,
            None => y,
        })
    }
}

/// Batch normalization over `[N, C, H, W]` with running statistics.
#[derive(Debug, Clone)]
struct BatchNorm {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Var,
    running_var: Var,
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

impl BatchNorm {
    fn new(b: &mut Builder<'_>, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: b.param("weight", &[c], Init::Ones, ParamKind::Norm)?,
            beta: b.param("bias", &[c], Init::Zeros, ParamKind::Norm)?,
            running_mean: b.buffer("running_mean", &[c], Init::Zeros)?,
            running_var: b.buffer("running_var", &[c], Init::Ones)?,
        })
    }

    fn forward(&self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let shape = (1, c, 1, 1);
        let (mean, var) = if ctx.training {
            let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let xc = x.broadcast_sub(&mean)?;
            let var = xc.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let count = (n * h * w) as f64;
            let unbiased = if count > 1.0 { (var.detach() * (count / (count - 1.0)))? } else { var.detach() };
            let rm = ((self.running_mean.as_tensor() * (1.0 - BN_MOMENTUM))?
                + (mean.detach().flatten_all()? * BN_MOMENTUM)?)?;
            let rv = ((self.running_var.as_tensor() * (1.0 - BN_MOMENTUM))?
                + (unbiased.flatten_all()? * BN_MOMENTUM)?)?;
            self.running_mean.set(&rm)?;
            self.running_var.set(&rv)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape(shape)?,
                self.running_var.as_tensor().reshape(shape)?,
            )
        };
        let xn = x.broadcast_sub(&mean)?.broadcast_div(&(var + BN_EPS)?.sqrt()?)?;
        Ok(xn
            .broadcast_mul(&self.gamma.reshape(shape)?)?
            .broadcast_add(&self.beta.reshape(shape)?)?)
    }
}

/// conv+ReLU, then `depth - 2` conv+BN+ReLU layers, then a conv that
/// predicts the noise to subtract from the input.
#[derive(Debug, Clone)]
pub struct DnCnn {
    first: Conv3,
    middle: Vec<(Conv3, BatchNorm)>,
    last: Conv3,
}

impl DnCnn {
    pub fn new(b: &mut Builder<'_>, cfg: &DnCnnConfig) -> Result<Self> {
        if cfg.depth < 2 || cfg.features == 0 {
            return Err(Error::arg(format!("DnCNN needs depth >= 2, got {}", cfg.depth)));
        }
        let f = cfg.features;
        let he = |cin: usize| Init::Normal((2.0 / (9 * cin) as f64).sqrt());
        let first = Conv3::new(&mut b.pp("conv0"), 2, f, true, he(2))?;
        let mut middle = Vec::new();
        for i in 1..cfg.depth - 1 {
            let conv = Conv3::new(&mut b.pp(format!("conv{i}")), f, f, false, he(f))?;
            let bn = BatchNorm::new(&mut b.pp(format!("bn{i}")), f)?;
            middle.push((conv, bn));
        }
        // zero last layer: the untrained network is the identity
        let last = Conv3::new(&mut b.pp(format!("conv{}", cfg.depth - 1)), f, 2, true, Init::Zeros)?;
        Ok(Self { first, middle, last })
    }

    /// Predicted noise for `[N, 2, G, G]` input.
    pub fn residual(&self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let mut h = self.first.forward(x)?.relu()?;
        for (conv, bn) in &self.middle {
            h = bn.forward(&conv.forward(&h)?, ctx)?.relu()?;
        }
        self.last.forward(&h)
    }

    pub fn forward(&self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        Ok((x - self.residual(x, ctx)?)?)
    }
}

/// Denoiser with its own parameter store, checkpointed separately from the
/// codec.
#[derive(Debug)]
pub struct Denoiser {
    pub config: DnCnnConfig,
    pub store: ParamStore,
    pub net: DnCnn,
}

impl Denoiser {
    pub fn new(config: DnCnnConfig, dtype: DType, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(dtype, seed);
        let net = DnCnn::new(&mut store.root().pp("dncnn"), &config)?;
        Ok(Self { config, store, net })
    }

    pub fn forward(&self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        self.net.forward(&x.to_dtype(self.store.dtype())?, ctx)
    }
}

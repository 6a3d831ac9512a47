//! Parameter storage and the small set of differentiable building blocks the
//! codec, the SNR-aware module and the denoiser are assembled from.
//!
//! Layers keep clones of the `Var` tensors they own; optimizer updates write
//! through `Var::set`, so a layer always sees the current values.

use std::cell::RefCell;
use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::compression::quant::{fake_quantize_activations, fake_quantize_weights, ActivationRangeState};
use crate::error::{Error, Result};
use crate::rng::{self, Stream, StreamRng};

/// What a parameter is, used to scope pruning and quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ParamKind {
    DenseWeight,
    Bias,
    Norm,
    PositionBias,
    ConvWeight,
    /// Non-trainable state such as normalization running statistics.
    Buffer,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
    /// Normal with the given std, redrawn outside two standard deviations.
    TruncNormal(f64),
    Normal(f64),
}

#[derive(Debug, Clone)]
pub struct Param {
    pub var: Var,
    pub kind: ParamKind,
}

/// Named, ordered collection of trainable tensors.
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    dtype: DType,
    device: Device,
    rng: StreamRng,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("tensors", &self.params.len())
            .field("params", &self.num_params())
            .field("dtype", &self.dtype)
            .finish()
    }
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            params: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            rng: rng::stream(seed, Stream::Init),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&mut self) -> Builder<'_> {
        Builder {
            store: self,
            prefix: String::new(),
        }
    }

    fn create(&mut self, name: String, shape: &[usize], init: Init, kind: ParamKind) -> Result<Var> {
        if self.params.contains_key(&name) {
            return Err(Error::arg(format!("parameter {name} registered twice")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(b) => (0..n).map(|_| self.rng.random_range(-b..=b)).collect(),
            Init::Normal(std) => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    std * z
                })
                .collect(),
            Init::TruncNormal(std) => (0..n)
                .map(|_| loop {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    if z.abs() <= 2.0 {
                        break std * z;
                    }
                })
                .collect(),
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.params.insert(name, Param { var: var.clone(), kind });
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Trainable variables (everything except buffers).
    pub fn vars(&self) -> Vec<Var> {
        self.params
            .values()
            .filter(|p| p.kind != ParamKind::Buffer)
            .map(|p| p.var.clone())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(|p| p.var.elem_count()).sum()
    }

    pub fn num_params_of(&self, kind: ParamKind) -> usize {
        self.params
            .values()
            .filter(|p| p.kind == kind)
            .map(|p| p.var.elem_count())
            .sum()
    }

    /// Overwrite a parameter in place, keeping its shape.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let p = self
            .params
            .get(name)
            .ok_or_else(|| Error::arg(format!("unknown parameter {name}")))?;
        if p.var.dims() != value.dims() {
            return Err(Error::dim(format!(
                "parameter {name}: expected shape {:?}, got {:?}",
                p.var.dims(),
                value.dims()
            )));
        }
        p.var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    pub fn values_f64(&self, name: &str) -> Result<Vec<f64>> {
        let p = self
            .params
            .get(name)
            .ok_or_else(|| Error::arg(format!("unknown parameter {name}")))?;
        Ok(p.var.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
    }

    pub fn set_values_f64(&self, name: &str, values: &[f64]) -> Result<()> {
        let p = self
            .params
            .get(name)
            .ok_or_else(|| Error::arg(format!("unknown parameter {name}")))?;
        let t = Tensor::from_slice(values, p.var.dims(), &self.device)?;
        self.set(name, &t)
    }

    /// Deep copy of all current values, for best-checkpoint tracking.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.params
            .iter()
            .map(|(k, p)| Ok((k.clone(), p.var.as_tensor().copy()?)))
            .collect()
    }

    pub fn restore(&self, snap: &BTreeMap<String, Tensor>) -> Result<()> {
        for (k, t) in snap {
            self.set(k, t)?;
        }
        Ok(())
    }

    /// Copy values from another store with identical names and shapes.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        for (k, p) in &self.params {
            let src = other
                .params
                .get(k)
                .ok_or_else(|| Error::arg(format!("source store lacks {k}")))?;
            if src.var.dims() != p.var.dims() {
                return Err(Error::dim(format!("shape mismatch for {k}")));
            }
            p.var.set(&src.var.as_tensor().to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

/// Hierarchical name scope into a [`ParamStore`].
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl Builder<'_> {
    pub fn pp(&mut self, name: impl std::fmt::Display) -> Builder<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Builder {
            store: self.store,
            prefix,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init, kind: ParamKind) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Ok(self.store.create(full, shape, init, kind)?.as_tensor().clone())
    }

    /// Non-trainable state updated in place during training.
    pub fn buffer(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        self.store.create(full, shape, init, ParamKind::Buffer)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> Device {
        self.store.device.clone()
    }
}

/// Per-forward-pass switches: training mode, simulated quantization and
/// activation-range observation for calibration.
#[derive(Default)]
pub struct ForwardCtx {
    pub training: bool,
    pub quant: Option<QuantRuntime>,
    observer: Option<RefCell<BTreeMap<String, (f64, f64)>>>,
}

/// Fake-quantization settings applied inside every [`Dense`] layer.
#[derive(Debug, Clone)]
pub struct QuantRuntime {
    pub bits: u32,
    pub quantize_weights: bool,
    /// Calibrated input ranges keyed by layer name; layers without an entry
    /// keep full-precision inputs.
    pub activations: BTreeMap<String, ActivationRangeState>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self::default()
    }

    pub fn train() -> Self {
        Self {
            training: true,
            ..Self::default()
        }
    }

    pub fn with_quant(mut self, quant: Option<QuantRuntime>) -> Self {
        self.quant = quant;
        self
    }

    pub fn observing(mut self) -> Self {
        self.observer = Some(RefCell::new(BTreeMap::new()));
        self
    }

    /// Per-layer (min, max) of the inputs seen since the last call.
    pub fn take_observations(&self) -> BTreeMap<String, (f64, f64)> {
        self.observer
            .as_ref()
            .map(|o| std::mem::take(&mut *o.borrow_mut()))
            .unwrap_or_default()
    }

    fn observe(&self, name: &str, x: &Tensor) -> Result<()> {
        if let Some(obs) = &self.observer {
            let flat = x.flatten_all()?;
            let lo = flat.min(0)?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            let hi = flat.max(0)?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            let mut map = obs.borrow_mut();
            let e = map.entry(name.to_string()).or_insert((lo, hi));
            e.0 = e.0.min(lo);
            e.1 = e.1.max(hi);
        }
        Ok(())
    }
}

/// Fully connected layer acting on the last axis. Weight layout `[out, in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    name: String,
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Dense {
    pub fn new(b: &mut Builder<'_>, in_dim: usize, out_dim: usize, bias: bool, init: Init) -> Result<Self> {
        let weight = b.param("weight", &[out_dim, in_dim], init, ParamKind::DenseWeight)?;
        let bias = if bias {
            Some(b.param("bias", &[out_dim], Init::Zeros, ParamKind::Bias)?)
        } else {
            None
        };
        Ok(Self {
            name: b.prefix().to_string(),
            weight,
            bias,
        })
    }

    /// Default PyTorch linear init: U(-1/sqrt(in), 1/sqrt(in)).
    pub fn fan_in(b: &mut Builder<'_>, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::new(b, in_dim, out_dim, true, Init::Uniform(1.0 / (in_dim as f64).sqrt()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = self.in_dim();
        if dims.last() != Some(&in_dim) {
            return Err(Error::dim(format!(
                "{}: expected last axis {in_dim}, got shape {dims:?}",
                self.name
            )));
        }
        ctx.observe(&self.name, x)?;
        let rows = x.elem_count() / in_dim;
        let mut x2 = x.reshape((rows, in_dim))?;
        let mut w = self.weight.clone();
        if let Some(q) = &ctx.quant {
            if q.quantize_weights {
                w = fake_quantize_weights(&w, q.bits)?;
            }
            if let Some(range) = q.activations.get(&self.name) {
                x2 = fake_quantize_activations(&x2, range, q.bits)?;
            }
        }
        let mut y = x2.matmul(&w.t()?)?;
        if let Some(b) = &self.bias {
            y = y.broadcast_add(b)?;
        }
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.out_dim();
        Ok(y.reshape(out_dims)?)
    }
}

/// Layer normalization over the last axis, composed from differentiable ops.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(b: &mut Builder<'_>, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: b.param("weight", &[dim], Init::Ones, ParamKind::Norm)?,
            beta: b.param("bias", &[dim], Init::Zeros, ParamKind::Norm)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(xn.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Softmax over the last axis with a max shift.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    // 1 / (1 + exp(-x)), written out so it carries a gradient in every dtype.
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Host copy of a tensor as `f64`.
pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

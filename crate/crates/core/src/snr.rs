//! SNR-aware enhancement: an SNR-gated chain of dense layers (phase one)
//! followed by SNR-conditioned squeeze-and-excitation (phase two).

use candle_core::{Tensor, D};

use crate::codec::SemanticMap;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Builder, Dense, ForwardCtx};

pub const NUM_MAPPERS: usize = 7;

/// Per-item SNR in dB as a `[batch]` tensor of the model dtype.
pub fn snr_tensor(snr_db: &[f64], batch: usize, like: &Tensor) -> Result<Tensor> {
    let v = match snr_db.len() {
        1 => vec![snr_db[0]; batch],
        n if n == batch => snr_db.to_vec(),
        n => return Err(Error::dim(format!("{n} SNR values for a batch of {batch}"))),
    };
    if v.iter().any(|s| !s.is_finite()) {
        return Err(Error::arg("SNR must be finite"));
    }
    Ok(Tensor::from_vec(v, batch, like.device())?.to_dtype(like.dtype())?)
}

/// Affine map of dB values onto roughly [-1, 1] over the training range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrScaling {
    pub mid: f64,
    pub half_width: f64,
}

impl SnrScaling {
    pub fn from_range((lo, hi): (f64, f64)) -> Self {
        let half = (hi - lo) / 2.0;
        Self {
            mid: (lo + hi) / 2.0,
            half_width: if half > 0.0 { half } else { 1.0 },
        }
    }

    /// `[batch]` dB to `[batch, 1]` standardized.
    pub fn apply(&self, snr: &Tensor) -> Result<Tensor> {
        Ok(((snr - self.mid)? / self.half_width)?.unsqueeze(1)?)
    }
}

/// Three dense layers from the scalar SNR to a gate vector in (0,1)^M.
#[derive(Debug, Clone)]
pub struct SnrMapper {
    l1: Dense,
    l2: Dense,
    l3: Dense,
}

impl SnrMapper {
    pub fn new(b: &mut Builder<'_>, m: usize) -> Result<Self> {
        let hidden = (m / 2).max(1);
        Ok(Self {
            l1: Dense::fan_in(&mut b.pp("fc1"), 1, hidden)?,
            l2: Dense::fan_in(&mut b.pp("fc2"), hidden, hidden)?,
            l3: Dense::fan_in(&mut b.pp("fc3"), hidden, m)?,
        })
    }

    /// `[batch, 1]` standardized SNR to `[batch, M]`.
    pub fn forward(&self, snr: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let h = self.l1.forward(snr, ctx)?.relu()?;
        let h = self.l2.forward(&h, ctx)?.relu()?;
        sigmoid(&self.l3.forward(&h, ctx)?)
    }
}

/// Two dense layers from the context vector to per-channel scales.
#[derive(Debug, Clone)]
pub struct Excitation {
    l1: Dense,
    l2: Dense,
}

impl Excitation {
    pub fn new(b: &mut Builder<'_>, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = (channels / reduction.max(1)).max(1);
        Ok(Self {
            l1: Dense::fan_in(&mut b.pp("fc1"), channels + 1, hidden)?,
            l2: Dense::fan_in(&mut b.pp("fc2"), hidden, channels)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.l2.out_dim()
    }

    /// `[batch, C + 1]` context to `[batch, C]` scales in (0, 1).
    pub fn forward(&self, context: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let h = self.l1.forward(context, ctx)?.relu()?;
        sigmoid(&self.l2.forward(&h, ctx)?)
    }
}

/// Mean over all spatial positions: `[batch, l, C]` to `[batch, C]`.
pub fn global_pool(map: &SemanticMap) -> Result<Tensor> {
    Ok(map.tokens.mean(1)?)
}

/// Channel-wise product of a map with `[batch, C]` scales.
pub fn rescale(map: &SemanticMap, scales: &Tensor) -> Result<SemanticMap> {
    let (b, c) = scales.dims2()?;
    if b != map.batch() || c != map.channels() {
        return Err(Error::dim(format!(
            "scales [{b}, {c}] do not match a map of {} x {} channels",
            map.batch(),
            map.channels()
        )));
    }
    map.with_tokens(map.tokens.broadcast_mul(&scales.unsqueeze(1)?)?)
}

#[derive(Debug, Clone)]
pub struct SnrModule {
    fcs: Vec<Dense>,
    mappers: Vec<SnrMapper>,
    excite: Excitation,
    scaling: SnrScaling,
}

impl SnrModule {
    /// `channels` is `C_S`; the inner width `M` equals it.
    pub fn new(b: &mut Builder<'_>, channels: usize, reduction: usize, snr_range_db: (f64, f64)) -> Result<Self> {
        let m = channels;
        let mut fcs = Vec::with_capacity(NUM_MAPPERS + 1);
        for i in 0..=NUM_MAPPERS {
            let (i_dim, o_dim) = match i {
                0 => (channels, m),
                NUM_MAPPERS => (m, channels),
                _ => (m, m),
            };
            fcs.push(Dense::fan_in(&mut b.pp(format!("fc{}", i + 1)), i_dim, o_dim)?);
        }
        let mappers = (0..NUM_MAPPERS)
            .map(|j| SnrMapper::new(&mut b.pp(format!("mapper{}", j + 1)), m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            fcs,
            mappers,
            excite: Excitation::new(&mut b.pp("excite"), channels, reduction)?,
            scaling: SnrScaling::from_range(snr_range_db),
        })
    }

    pub fn channels(&self) -> usize {
        self.excite.channels()
    }

    /// Gate vectors `v_1..v_7`, each `[batch, M]`.
    pub fn gates(&self, snr: &Tensor, ctx: &ForwardCtx) -> Result<Vec<Tensor>> {
        let s = self.scaling.apply(snr)?;
        self.mappers.iter().map(|m| m.forward(&s, ctx)).collect()
    }

    /// Phase one with explicit gates, so tests can pin them.
    pub fn phase_one_with_gates(&self, map: &SemanticMap, gates: &[Tensor], ctx: &ForwardCtx) -> Result<SemanticMap> {
        if map.channels() != self.channels() {
            return Err(Error::dim(format!(
                "SNR module expects {} channels, got {}",
                self.channels(),
                map.channels()
            )));
        }
        if gates.len() != NUM_MAPPERS {
            return Err(Error::arg(format!("{} gates supplied, {NUM_MAPPERS} needed", gates.len())));
        }
        let mut h = self.fcs[0].forward(&map.tokens, ctx)?;
        for (v, fc) in gates.iter().zip(&self.fcs[1..]) {
            h = h.broadcast_mul(&v.unsqueeze(1)?)?;
            h = fc.forward(&h, ctx)?;
        }
        map.with_tokens((&map.tokens + h)?)
    }

    pub fn phase_one(&self, map: &SemanticMap, snr: &Tensor, ctx: &ForwardCtx) -> Result<SemanticMap> {
        let gates = self.gates(snr, ctx)?;
        self.phase_one_with_gates(map, &gates, ctx)
    }

    /// Context `[batch, C + 1]` = (standardized SNR, pooled channels).
    pub fn context(&self, map: &SemanticMap, snr: &Tensor) -> Result<Tensor> {
        let pooled = global_pool(map)?;
        Ok(Tensor::cat(&[&self.scaling.apply(snr)?, &pooled], D::Minus1)?)
    }

    pub fn phase_two(&self, map: &SemanticMap, snr: &Tensor, ctx: &ForwardCtx) -> Result<SemanticMap> {
        let s = self.excite.forward(&self.context(map, snr)?, ctx)?;
        rescale(map, &s)
    }

    /// `snr`: `[batch]` in dB.
    pub fn forward(&self, map: &SemanticMap, snr: &Tensor, ctx: &ForwardCtx) -> Result<SemanticMap> {
        let y1 = self.phase_one(map, snr, ctx)?;
        self.phase_two(&y1, snr, ctx)
    }
}

//! Shifted-window multi-head self-attention blocks.

use candle_core::{Tensor, D};

use super::config::effective_window;
use super::patch::SemanticMap;
use crate::error::{Error, Result};
use crate::nn::{softmax_last, Builder, Dense, ForwardCtx, Init, LayerNorm, ParamKind};

const MASK_VALUE: f64 = -100.0;

/// Relative-position index into the `(2ws-1)^2` bias table for every
/// (query, key) pair inside a window.
fn relative_position_index(ws: usize) -> Vec<u32> {
    let n = ws * ws;
    let span = 2 * ws - 1;
    let mut idx = Vec::with_capacity(n * n);
    for q in 0..n {
        let (qy, qx) = (q / ws, q % ws);
        for k in 0..n {
            let (ky, kx) = (k / ws, k % ws);
            let dy = qy + ws - 1 - ky;
            let dx = qx + ws - 1 - kx;
            idx.push((dy * span + dx) as u32);
        }
    }
    idx
}

/// Additive mask `[nW, N, N]` that keeps cyclically shifted windows from
/// attending across the wrap-around seam.
fn shift_mask(h: usize, w: usize, ws: usize, shift: usize) -> Vec<f64> {
    let region = |i: usize, side: usize| -> usize {
        if i < side - ws {
            0
        } else if i < side - shift {
            1
        } else {
            2
        }
    };
    let (nh, nw) = (h / ws, w / ws);
    let n = ws * ws;
    let mut mask = Vec::with_capacity(nh * nw * n * n);
    for wi in 0..nh {
        for wj in 0..nw {
            let labels: Vec<usize> = (0..n)
                .map(|t| {
                    let (y, x) = (wi * ws + t / ws, wj * ws + t % ws);
                    region(y, h) * 3 + region(x, w)
                })
                .collect();
            for a in &labels {
                for b in &labels {
                    mask.push(if a == b { 0.0 } else { MASK_VALUE });
                }
            }
        }
    }
    mask
}

/// `[B, H, W, C]` to `[B * nW, ws * ws, C]`.
fn window_partition(x: &Tensor, ws: usize) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    Ok(x.reshape((b, h / ws, ws, w / ws, ws, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b * (h / ws) * (w / ws), ws * ws, c))?)
}

fn window_reverse(windows: &Tensor, ws: usize, b: usize, h: usize, w: usize) -> Result<Tensor> {
    let c = windows.dim(D::Minus1)?;
    Ok(windows
        .reshape((b, h / ws, w / ws, ws, ws, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b, h, w, c))?)
}

#[derive(Debug, Clone)]
pub struct WindowAttention {
    qkv: Dense,
    proj: Dense,
    bias_table: Tensor,
    bias_index: Tensor,
    heads: usize,
    window: usize,
    scale: f64,
}

impl WindowAttention {
    pub fn new(b: &mut Builder<'_>, dim: usize, heads: usize, window: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::dim(format!("{dim} channels over {heads} heads")));
        }
        let span = 2 * window - 1;
        let bias_table = b.param(
            "relative_position_bias_table",
            &[span * span, heads],
            Init::TruncNormal(0.02),
            ParamKind::PositionBias,
        )?;
        let idx = relative_position_index(window);
        let bias_index = Tensor::from_vec(idx, window.pow(4), &b.device())?;
        Ok(Self {
            qkv: Dense::new(&mut b.pp("qkv"), dim, 3 * dim, true, Init::TruncNormal(0.02))?,
            proj: Dense::new(&mut b.pp("proj"), dim, dim, true, Init::TruncNormal(0.02))?,
            bias_table,
            bias_index,
            heads,
            window,
            scale: ((dim / heads) as f64).powf(-0.5),
        })
    }

    /// `x`: `[B * nW, N, C]`; `mask`: `[nW, N, N]`.
    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>, ctx: &ForwardCtx) -> Result<Tensor> {
        let (bw, n, c) = x.dims3()?;
        let hd = c / self.heads;
        let qkv = self
            .qkv
            .forward(x, ctx)?
            .reshape((bw, n, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = (qkv.get(0)?.contiguous()? * self.scale)?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let mut attn = q.matmul(&k.t()?.contiguous()?)?;
        let nn = self.window * self.window;
        let bias = self
            .bias_table
            .index_select(&self.bias_index, 0)?
            .reshape((nn, nn, self.heads))?
            .permute((2, 0, 1))?
            .contiguous()?;
        attn = attn.broadcast_add(&bias.unsqueeze(0)?)?;
        if let Some(mask) = mask {
            let nw = mask.dim(0)?;
            attn = attn
                .reshape((bw / nw, nw, self.heads, n, n))?
                .broadcast_add(&mask.unsqueeze(1)?.unsqueeze(0)?)?
                .reshape((bw, self.heads, n, n))?;
        }
        let attn = softmax_last(&attn)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((bw, n, c))?;
        self.proj.forward(&out, ctx)
    }
}

#[derive(Debug, Clone)]
struct Mlp {
    fc1: Dense,
    fc2: Dense,
}

impl Mlp {
    fn forward(&self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let h = self.fc1.forward(x, ctx)?.gelu_erf()?;
        self.fc2.forward(&h, ctx)
    }
}

/// One pre-norm Swin block for a fixed token grid.
#[derive(Debug, Clone)]
pub struct SwinBlock {
    norm1: LayerNorm,
    attn: WindowAttention,
    norm2: LayerNorm,
    mlp: Mlp,
    grid: (usize, usize),
    window: usize,
    shift: usize,
    mask: Option<Tensor>,
}

impl SwinBlock {
    /// `shifted` selects the cyclic-shift variant; it is ignored when the grid
    /// fits in a single window.
    pub fn new(
        b: &mut Builder<'_>,
        dim: usize,
        heads: usize,
        window: usize,
        grid: (usize, usize),
        shifted: bool,
        mlp_ratio: usize,
    ) -> Result<Self> {
        let (ws, half) = effective_window(window, grid.0, grid.1)?;
        let shift = if shifted { half } else { 0 };
        let mask = if shift > 0 {
            let m = shift_mask(grid.0, grid.1, ws, shift);
            let nw = (grid.0 / ws) * (grid.1 / ws);
            let n = ws * ws;
            Some(Tensor::from_vec(m, (nw, n, n), &b.device())?.to_dtype(b.dtype())?)
        } else {
            None
        };
        Ok(Self {
            norm1: LayerNorm::new(&mut b.pp("norm1"), dim)?,
            attn: WindowAttention::new(&mut b.pp("attn"), dim, heads, ws)?,
            norm2: LayerNorm::new(&mut b.pp("norm2"), dim)?,
            mlp: Mlp {
                fc1: Dense::new(&mut b.pp("mlp.fc1"), dim, mlp_ratio * dim, true, Init::TruncNormal(0.02))?,
                fc2: Dense::new(&mut b.pp("mlp.fc2"), mlp_ratio * dim, dim, true, Init::TruncNormal(0.02))?,
            },
            grid,
            window: ws,
            shift,
            mask,
        })
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn forward(&self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let (b, l, c) = x.dims3()?;
        let (h, w) = self.grid;
        if l != h * w {
            return Err(Error::dim(format!("block built for a {h}x{w} grid got {l} tokens")));
        }
        let s = self.shift as i32;
        let mut t = self.norm1.forward(x)?.reshape((b, h, w, c))?;
        if s > 0 {
            t = t.roll(-s, 1)?.roll(-s, 2)?;
        }
        let win = window_partition(&t, self.window)?;
        let att = self.attn.forward(&win, self.mask.as_ref(), ctx)?;
        let mut t = window_reverse(&att, self.window, b, h, w)?;
        if s > 0 {
            t = t.roll(s, 1)?.roll(s, 2)?;
        }
        let x = (x + t.reshape((b, l, c))?)?;
        let m = self.mlp.forward(&self.norm2.forward(&x)?, ctx)?;
        Ok((x + m)?)
    }
}

/// `depth` blocks alternating regular and shifted windows.
#[derive(Debug, Clone)]
pub struct SwinStage {
    blocks: Vec<SwinBlock>,
}

impl SwinStage {
    pub fn new(
        b: &mut Builder<'_>,
        depth: usize,
        dim: usize,
        heads: usize,
        window: usize,
        grid: (usize, usize),
        mlp_ratio: usize,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| SwinBlock::new(&mut b.pp(format!("block{i}")), dim, heads, window, grid, i % 2 == 1, mlp_ratio))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[SwinBlock] {
        &self.blocks
    }

    pub fn forward(&self, map: &SemanticMap, ctx: &ForwardCtx) -> Result<SemanticMap> {
        let mut t = map.tokens.clone();
        for blk in &self.blocks {
            t = blk.forward(&t, ctx)?;
        }
        map.with_tokens(t)
    }
}

//! Token-grid resampling: 2x2 patch embedding, patch merging (downsampling)
//! and patch division (upsampling).

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::{Builder, Dense, ForwardCtx, Init};

/// Token grid `[batch, l, C]` with its spatial layout `l = h * w`, row-major.
#[derive(Debug, Clone)]
pub struct SemanticMap {
    pub tokens: Tensor,
    pub grid: (usize, usize),
}

impl SemanticMap {
    pub fn new(tokens: Tensor, grid: (usize, usize)) -> Result<Self> {
        let (_, l, _) = tokens.dims3()?;
        if l != grid.0 * grid.1 {
            return Err(Error::dim(format!(
                "{l} tokens do not form a {}x{} grid",
                grid.0, grid.1
            )));
        }
        Ok(Self { tokens, grid })
    }

    pub fn batch(&self) -> usize {
        self.tokens.dims()[0]
    }

    pub fn len(&self) -> usize {
        self.tokens.dims()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.tokens.dims()[2]
    }

    pub fn with_tokens(&self, tokens: Tensor) -> Result<Self> {
        Self::new(tokens, self.grid)
    }
}

/// `[B, H, W, 3]` image to `[B, (H/2)(W/2), 12]` raw patches, each patch
/// flattened as (row offset, column offset, colour).
pub fn patchify(image: &Tensor) -> Result<(Tensor, (usize, usize))> {
    let (b, h, w, c) = image.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("image {h}x{w} has an odd side")));
    }
    let t = image
        .reshape((b, h / 2, 2, w / 2, 2, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b, (h / 2) * (w / 2), 4 * c))?;
    Ok((t, (h / 2, w / 2)))
}

/// Concatenate each 2x2 neighbourhood into one token of `4C` channels, in the
/// order (0,0), (1,0), (0,1), (1,1) as (row, column) offsets.
pub fn merge_gather(map: &SemanticMap) -> Result<SemanticMap> {
    let (h, w) = map.grid;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("cannot merge an odd {h}x{w} grid")));
    }
    let (b, c) = (map.batch(), map.channels());
    let t = map
        .tokens
        .reshape((b, h / 2, 2, w / 2, 2, c))?
        // (b, i, dy, j, dx, c) -> (b, i, j, dx, dy, c)
        .permute((0, 1, 3, 4, 2, 5))?
        .contiguous()?
        .reshape((b, (h / 2) * (w / 2), 4 * c))?;
    SemanticMap::new(t, (h / 2, w / 2))
}

/// Inverse of a 2x2 space-to-depth: `[B, hw, 4C]` read as (dy, dx, c) to a
/// `2h x 2w` grid of `C` channels.
pub fn depth_to_space(map: &SemanticMap) -> Result<SemanticMap> {
    let (h, w) = map.grid;
    let (b, c4) = (map.batch(), map.channels());
    if c4 % 4 != 0 {
        return Err(Error::dim(format!("{c4} channels cannot be split over a 2x2 block")));
    }
    let c = c4 / 4;
    let t = map
        .tokens
        .reshape((b, h, w, 2, 2, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b, 4 * h * w, c))?;
    SemanticMap::new(t, (2 * h, 2 * w))
}

/// Uniform initialization scaled by fan-in, used by the resampling layers so
/// the signal keeps its scale through the un-normalized projections.
pub(crate) fn fan_in(n: usize) -> Init {
    Init::Uniform(1.0 / (n as f64).sqrt())
}

/// Linear projection of 2x2x3 pixel patches to `C_1` channels.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    proj: Dense,
}

impl PatchEmbed {
    pub fn new(b: &mut Builder<'_>, out_channels: usize) -> Result<Self> {
        Ok(Self {
            proj: Dense::new(&mut b.pp("proj"), 12, out_channels, true, fan_in(12))?,
        })
    }

    pub fn from_dense(proj: Dense) -> Self {
        Self { proj }
    }

    pub fn forward(&self, image: &Tensor, ctx: &ForwardCtx) -> Result<SemanticMap> {
        let (patches, grid) = patchify(image)?;
        SemanticMap::new(self.proj.forward(&patches, ctx)?, grid)
    }
}

/// 2x downsampler: neighbour concatenation then a linear map to the next
/// stage's width.
#[derive(Debug, Clone)]
pub struct PatchMerge {
    proj: Dense,
}

impl PatchMerge {
    pub fn new(b: &mut Builder<'_>, in_channels: usize, out_channels: usize) -> Result<Self> {
        Ok(Self {
            proj: Dense::new(
                &mut b.pp("proj"),
                4 * in_channels,
                out_channels,
                false,
                fan_in(4 * in_channels),
            )?,
        })
    }

    pub fn from_dense(proj: Dense) -> Self {
        Self { proj }
    }

    pub fn forward(&self, map: &SemanticMap, ctx: &ForwardCtx) -> Result<SemanticMap> {
        let gathered = merge_gather(map)?;
        let t = self.proj.forward(&gathered.tokens, ctx)?;
        gathered.with_tokens(t)
    }
}

/// 2x upsampler mirroring [`PatchMerge`]: a linear map to four times the
/// target width, then depth-to-space.
#[derive(Debug, Clone)]
pub struct PatchDivide {
    proj: Dense,
}

impl PatchDivide {
    pub fn new(b: &mut Builder<'_>, in_channels: usize, out_channels: usize) -> Result<Self> {
        Ok(Self {
            proj: Dense::new(
                &mut b.pp("proj"),
                in_channels,
                4 * out_channels,
                true,
                fan_in(in_channels),
            )?,
        })
    }

    pub fn forward(&self, map: &SemanticMap, ctx: &ForwardCtx) -> Result<SemanticMap> {
        let t = self.proj.forward(&map.tokens, ctx)?;
        depth_to_space(&map.with_tokens(t)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::{DType, Device};

    fn ramp(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn single_patch_identity_sum() {
        let mut store = ParamStore::new(DType::F64, 0);
        let dense = Dense::new(&mut store.root().pp("e"), 12, 1, false, Init::Ones).unwrap();
        let embed = PatchEmbed::from_dense(dense);
        let img = ramp(&[1, 2, 2, 3]);
        let expect: f64 = img.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().sum();
        let out = embed.forward(&img, &ForwardCtx::eval()).unwrap();
        assert_eq!(out.grid, (1, 1));
        let got = out.tokens.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!((got[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn embed_matches_reshape_and_matmul_oracle() {
        let mut store = ParamStore::new(DType::F64, 3);
        let embed = PatchEmbed::new(&mut store.root().pp("e"), 8).unwrap();
        let img = ramp(&[2, 4, 4, 3]);
        let out = embed.forward(&img, &ForwardCtx::eval()).unwrap();
        assert_eq!(out.tokens.dims(), &[2, 4, 8]);
        let w = store.values_f64("e.proj.weight").unwrap();
        let bias = store.values_f64("e.proj.bias").unwrap();
        let x = img.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let got = out.tokens.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for b in 0..2 {
            for pi in 0..2 {
                for pj in 0..2 {
                    let mut patch = Vec::new();
                    for dy in 0..2 {
                        for dx in 0..2 {
                            for c in 0..3 {
                                let (r, col) = (2 * pi + dy, 2 * pj + dx);
                                patch.push(x[((b * 4 + r) * 4 + col) * 3 + c]);
                            }
                        }
                    }
                    let tok = pi * 2 + pj;
                    for o in 0..8 {
                        let want: f64 = (0..12).map(|i| w[o * 12 + i] * patch[i]).sum::<f64>() + bias[o];
                        let g = got[(b * 4 + tok) * 8 + o];
                        assert!((g - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn cifar_embed_shape() {
        let mut store = ParamStore::new(DType::F32, 0);
        let embed = PatchEmbed::new(&mut store.root(), 128).unwrap();
        let img = Tensor::zeros((1, 32, 32, 3), DType::F32, &Device::Cpu).unwrap();
        let out = embed.forward(&img, &ForwardCtx::eval()).unwrap();
        assert_eq!(out.tokens.dims(), &[1, 256, 128]);
        assert_eq!(out.grid, (16, 16));
    }

    #[test]
    fn odd_sides_rejected() {
        let img = Tensor::zeros((1, 3, 4, 3), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(patchify(&img), Err(Error::Dimension(_))));
        let map = SemanticMap::new(Tensor::zeros((1, 6, 2), DType::F32, &Device::Cpu).unwrap(), (3, 2)).unwrap();
        assert!(matches!(merge_gather(&map), Err(Error::Dimension(_))));
    }

    #[test]
    fn merge_identity_block_is_explicit_gather() {
        // projection = identity on the 4C concatenation
        let c = 4;
        let mut store = ParamStore::new(DType::F64, 0);
        let mut root = store.root();
        let dense = Dense::new(&mut root.pp("m"), 4 * c, 4 * c, false, Init::Zeros).unwrap();
        let eye: Vec<f64> = (0..16 * c * c).map(|i| if i / (4 * c) == i % (4 * c) { 1.0 } else { 0.0 }).collect();
        store.set_values_f64("m.weight", &eye).unwrap();
        let merge = PatchMerge::from_dense(dense);
        let t = ramp(&[1, 64, c]);
        let map = SemanticMap::new(t.clone(), (8, 8)).unwrap();
        let out = merge.forward(&map, &ForwardCtx::eval()).unwrap();
        assert_eq!(out.grid, (4, 4));
        let src = t.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let got = out.tokens.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let offsets = [(0, 0), (1, 0), (0, 1), (1, 1)];
        for i in 0..4 {
            for j in 0..4 {
                for (k, (dy, dx)) in offsets.iter().enumerate() {
                    for ch in 0..c {
                        let want = src[((2 * i + dy) * 8 + (2 * j + dx)) * c + ch];
                        let g = got[(i * 4 + j) * 4 * c + k * c + ch];
                        assert_eq!(g, want);
                    }
                }
            }
        }
    }

    #[test]
    fn merge_and_divide_shapes() {
        let mut store = ParamStore::new(DType::F32, 0);
        let mut root = store.root();
        let merge = PatchMerge::new(&mut root.pp("m"), 128, 192).unwrap();
        let divide = PatchDivide::new(&mut root.pp("d"), 256, 192).unwrap();
        let back = PatchDivide::new(&mut root.pp("b"), 192, 128).unwrap();
        let ctx = ForwardCtx::eval();
        let m = SemanticMap::new(Tensor::zeros((2, 256, 128), DType::F32, &Device::Cpu).unwrap(), (16, 16)).unwrap();
        let merged = merge.forward(&m, &ctx).unwrap();
        assert_eq!((merged.grid, merged.channels()), ((8, 8), 192));
        let round = back.forward(&merged, &ctx).unwrap();
        assert_eq!(round.tokens.dims(), m.tokens.dims());
        assert_eq!(round.grid, m.grid);
        let deep = SemanticMap::new(Tensor::zeros((1, 64, 256), DType::F32, &Device::Cpu).unwrap(), (8, 8)).unwrap();
        let up = divide.forward(&deep, &ctx).unwrap();
        assert_eq!((up.grid, up.channels()), ((16, 16), 192));
        let one = SemanticMap::new(Tensor::zeros((1, 1, 256), DType::F32, &Device::Cpu).unwrap(), (1, 1)).unwrap();
        assert_eq!(divide.forward(&one, &ctx).unwrap().grid, (2, 2));
    }

    #[test]
    fn depth_to_space_inverts_patchify() {
        let img = ramp(&[2, 6, 4, 3]);
        let (p, grid) = patchify(&img).unwrap();
        let back = depth_to_space(&SemanticMap::new(p, grid).unwrap()).unwrap();
        let back = back.tokens.reshape((2, 6, 4, 3)).unwrap();
        let d = (back - &img).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(d, 0.0);
    }
}

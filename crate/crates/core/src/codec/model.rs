use candle_core::{DType, Tensor};

use super::config::{check_image_shape, ModelConfig};
use super::patch::{fan_in, PatchDivide, PatchEmbed, PatchMerge, SemanticMap};
use super::power::{power_normalize, ComplexSymbols};
use super::swin::SwinStage;
use crate::error::{Error, Result};
use crate::nn::{Builder, Dense, ForwardCtx, ParamStore};
use crate::snr::{snr_tensor, SnrModule};

#[derive(Debug, Clone)]
struct EncoderStage {
    merge: Option<PatchMerge>,
    blocks: SwinStage,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    embed: PatchEmbed,
    stages: Vec<EncoderStage>,
    snr: Option<SnrModule>,
    head: Dense,
    config: ModelConfig,
}

impl Encoder {
    pub fn new(b: &mut Builder<'_>, config: &ModelConfig) -> Result<Self> {
        let st = &config.stages;
        let embed = PatchEmbed::new(&mut b.pp("embed"), st.channels[0])?;
        let mut stages = Vec::new();
        for s in 0..st.num_stages() {
            let mut sb = b.pp(format!("stage{}", s + 1));
            let merge = if s == 0 {
                None
            } else {
                Some(PatchMerge::new(&mut sb.pp("merge"), st.channels[s - 1], st.channels[s])?)
            };
            let blocks = SwinStage::new(
                &mut sb,
                st.depths[s],
                st.channels[s],
                st.num_heads[s],
                st.window_size,
                config.grid(s + 1),
                st.mlp_ratio,
            )?;
            stages.push(EncoderStage { merge, blocks });
        }
        let snr = if config.snr_aware {
            Some(SnrModule::new(&mut b.pp("snr"), st.last_channels(), config.excite_reduction, config.snr_range_db)?)
        } else {
            None
        };
        let head = Dense::new(&mut b.pp("head"), st.last_channels(), st.output_channels, true, fan_in(st.last_channels()))?;
        Ok(Self {
            embed,
            stages,
            snr,
            head,
            config: config.clone(),
        })
    }

    /// Final semantic map before the channel-reshaping layer.
    pub fn features(&self, image: &Tensor, snr: &Tensor, ctx: &ForwardCtx) -> Result<SemanticMap> {
        let (_, h, w, c) = image.dims4()?;
        if c != 3 || h != self.config.image_height || w != self.config.image_width {
            return Err(Error::dim(format!(
                "encoder built for {}x{}x3 images, got {h}x{w}x{c}",
                self.config.image_height, self.config.image_width
            )));
        }
        check_image_shape(h, w, self.stages.len())?;
        let mut map = self.embed.forward(image, ctx)?;
        for st in &self.stages {
            if let Some(m) = &st.merge {
                map = m.forward(&map, ctx)?;
            }
            map = st.blocks.forward(&map, ctx)?;
        }
        match &self.snr {
            Some(m) => m.forward(&map, snr, ctx),
            None => Ok(map),
        }
    }

    pub fn forward(&self, image: &Tensor, snr: &Tensor, ctx: &ForwardCtx) -> Result<ComplexSymbols> {
        let map = self.features(image, snr, ctx)?;
        power_normalize(&self.head.forward(&map.tokens, ctx)?)
    }
}

#[derive(Debug, Clone)]
struct DecoderStage {
    blocks: SwinStage,
    divide: PatchDivide,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    head: Dense,
    snr: Option<SnrModule>,
    stages: Vec<DecoderStage>,
    config: ModelConfig,
}

impl Decoder {
    pub fn new(b: &mut Builder<'_>, config: &ModelConfig) -> Result<Self> {
        let st = &config.stages;
        let n = st.num_stages();
        let head = Dense::new(&mut b.pp("head"), st.output_channels, st.last_channels(), true, fan_in(st.output_channels))?;
        let snr = if config.snr_aware {
            Some(SnrModule::new(&mut b.pp("snr"), st.last_channels(), config.excite_reduction, config.snr_range_db)?)
        } else {
            None
        };
        let mut stages = Vec::new();
        // decoder stage i mirrors encoder stage n - i
        for i in 0..n {
            let s = n - 1 - i;
            let mut sb = b.pp(format!("stage{}", i + 1));
            let blocks = SwinStage::new(
                &mut sb,
                st.depths[s],
                st.channels[s],
                st.num_heads[s],
                st.window_size,
                config.grid(s + 1),
                st.mlp_ratio,
            )?;
            let out = if s == 0 { 3 } else { st.channels[s - 1] };
            let divide = PatchDivide::new(&mut sb.pp("divide"), st.channels[s], out)?;
            stages.push(DecoderStage { blocks, divide });
        }
        Ok(Self {
            head,
            snr,
            stages,
            config: config.clone(),
        })
    }

    pub fn forward(&self, symbols: &ComplexSymbols, snr: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let cfg = &self.config;
        let k = cfg.symbol_count();
        if symbols.k() != k {
            return Err(Error::dim(format!("decoder expects {k} symbols, got {}", symbols.k())));
        }
        let b = symbols.batch();
        let s = cfg.stages.num_stages();
        let reals = symbols.data.reshape((b, cfg.tokens(s), cfg.stages.output_channels))?;
        let mut map = SemanticMap::new(self.head.forward(&reals, ctx)?, cfg.grid(s))?;
        if let Some(m) = &self.snr {
            map = m.forward(&map, snr, ctx)?;
        }
        for st in &self.stages {
            map = st.blocks.forward(&map, ctx)?;
            map = st.divide.forward(&map, ctx)?;
        }
        let img = map.tokens.reshape((b, cfg.image_height, cfg.image_width, 3))?;
        if ctx.training {
            Ok(img)
        } else {
            Ok(img.clamp(0.0, 1.0)?)
        }
    }
}

/// Encoder, decoder and the parameter store they share.
#[derive(Debug)]
pub struct SwinSitCodec {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl SwinSitCodec {
    pub fn new(config: ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype, seed);
        let mut root = store.root();
        let encoder = Encoder::new(&mut root.pp("encoder"), &config)?;
        let decoder = Decoder::new(&mut root.pp("decoder"), &config)?;
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
        })
    }

    pub fn symbol_count(&self) -> usize {
        self.config.symbol_count()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// `snr_db` holds one value per batch item or a single shared value.
    pub fn encode(&self, image: &Tensor, snr_db: &[f64], ctx: &ForwardCtx) -> Result<ComplexSymbols> {
        let image = image.to_dtype(self.dtype())?;
        let snr = snr_tensor(snr_db, image.dim(0)?, &image)?;
        self.encoder.forward(&image, &snr, ctx)
    }

    pub fn decode(&self, symbols: &ComplexSymbols, snr_db: &[f64], ctx: &ForwardCtx) -> Result<Tensor> {
        let data = symbols.data.to_dtype(self.dtype())?;
        let snr = snr_tensor(snr_db, data.dim(0)?, &data)?;
        self.decoder.forward(&ComplexSymbols::new(data)?, &snr, ctx)
    }
}

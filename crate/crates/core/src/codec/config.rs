use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder/decoder stage layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    /// Swin blocks per stage.
    pub depths: Vec<usize>,
    /// Token channels per stage.
    pub channels: Vec<usize>,
    pub num_heads: Vec<usize>,
    /// Attention window side, in tokens.
    pub window_size: usize,
    /// Channels of the transmitted map; sets the code rate.
    pub output_channels: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
}

fn default_mlp_ratio() -> usize {
    4
}

impl StageConfig {
    /// Two-stage layout used for 32x32 inputs.
    pub fn low_resolution() -> Self {
        Self {
            depths: vec![2, 4],
            channels: vec![128, 256],
            num_heads: vec![4, 8],
            window_size: 4,
            output_channels: 28,
            mlp_ratio: 4,
        }
    }

    /// Four-stage layout used for large images.
    pub fn high_resolution() -> Self {
        Self {
            depths: vec![2, 2, 6, 2],
            channels: vec![128, 192, 256, 320],
            num_heads: vec![4, 6, 8, 10],
            window_size: 8,
            output_channels: 96,
            mlp_ratio: 4,
        }
    }

    pub fn num_stages(&self) -> usize {
        self.depths.len()
    }

    pub fn last_channels(&self) -> usize {
        *self.channels.last().expect("validated config has stages")
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.depths.len();
        if s == 0 {
            return Err(Error::arg("at least one stage is required"));
        }
        if self.channels.len() != s || self.num_heads.len() != s {
            return Err(Error::arg(format!(
                "depths, channels and num_heads must have equal length ({} / {} / {})",
                s,
                self.channels.len(),
                self.num_heads.len()
            )));
        }
        for (i, (&c, &h)) in self.channels.iter().zip(&self.num_heads).enumerate() {
            if c == 0 || h == 0 || c % h != 0 {
                return Err(Error::arg(format!(
                    "stage {}: {c} channels not divisible into {h} heads",
                    i + 1
                )));
            }
        }
        if self.window_size == 0 {
            return Err(Error::arg("window_size must be positive"));
        }
        if self.output_channels == 0 || self.output_channels % 2 != 0 {
            return Err(Error::arg(format!(
                "output channels must be positive and even, got {}",
                self.output_channels
            )));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::arg("mlp_ratio must be positive"));
        }
        Ok(())
    }
}

/// Full codec configuration, serialized into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub stages: StageConfig,
    /// `false` replaces both SNR-aware modules with identities.
    #[serde(default = "yes")]
    pub snr_aware: bool,
    /// SNR range used to standardize the SNR fed to the SNR-aware modules.
    #[serde(default = "default_snr_range")]
    pub snr_range_db: (f64, f64),
    /// Width reduction of the excitation network's hidden layer.
    #[serde(default = "default_reduction")]
    pub excite_reduction: usize,
}

fn yes() -> bool {
    true
}

fn default_snr_range() -> (f64, f64) {
    (1.0, 13.0)
}

fn default_reduction() -> usize {
    4
}

impl ModelConfig {
    pub fn new(image_height: usize, image_width: usize, stages: StageConfig) -> Self {
        Self {
            image_height,
            image_width,
            stages,
            snr_aware: true,
            snr_range_db: default_snr_range(),
            excite_reduction: default_reduction(),
        }
    }

    pub fn cifar() -> Self {
        Self::new(32, 32, StageConfig::low_resolution())
    }

    pub fn high_resolution(side: usize) -> Self {
        Self::new(side, side, StageConfig::high_resolution())
    }

    pub fn validate(&self) -> Result<()> {
        self.stages.validate()?;
        check_image_shape(self.image_height, self.image_width, self.stages.num_stages())?;
        for s in 1..=self.stages.num_stages() {
            let (h, w) = self.grid(s);
            effective_window(self.stages.window_size, h, w)?;
        }
        let (lo, hi) = self.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::arg(format!("invalid SNR range [{lo}, {hi}]")));
        }
        if self.excite_reduction == 0 {
            return Err(Error::arg("excite_reduction must be positive"));
        }
        Ok(())
    }

    /// Token grid after stage `s` (1-based): `(H / 2^s, W / 2^s)`.
    pub fn grid(&self, s: usize) -> (usize, usize) {
        (self.image_height >> s, self.image_width >> s)
    }

    pub fn tokens(&self, s: usize) -> usize {
        let (h, w) = self.grid(s);
        h * w
    }

    /// Source dimension `n = H W 3`.
    pub fn source_dim(&self) -> usize {
        self.image_height * self.image_width * 3
    }

    /// Complex channel uses per image, `k = l_S C / 2`.
    pub fn symbol_count(&self) -> usize {
        self.tokens(self.stages.num_stages()) * self.stages.output_channels / 2
    }

    pub fn code_rate(&self) -> f64 {
        self.symbol_count() as f64 / self.source_dim() as f64
    }

    /// Set the output channels to hit `rate` as closely as possible from below.
    pub fn with_rate(mut self, rate: f64) -> Result<Self> {
        let l = self.tokens(self.stages.num_stages());
        self.stages.output_channels = channels_for_rate(self.source_dim(), l, rate)?;
        Ok(self)
    }
}

/// Largest even `C` with `l C / 2 <= R n`.
pub fn channels_for_rate(n: usize, tokens: usize, rate: f64) -> Result<usize> {
    if !(rate > 0.0 && rate <= 1.0) || tokens == 0 {
        return Err(Error::arg(format!("rate must be in (0, 1], got {rate}")));
    }
    let budget = rate * n as f64;
    let half = (budget / tokens as f64 + 1e-9).floor() as usize;
    if half == 0 {
        return Err(Error::arg(format!(
            "rate {rate} leaves less than one complex symbol per token"
        )));
    }
    Ok(2 * half)
}

pub(crate) fn check_image_shape(h: usize, w: usize, stages: usize) -> Result<()> {
    let f = 1usize << stages;
    if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
        return Err(Error::dim(format!(
            "image {h}x{w} is not divisible by 2^{stages} = {f}"
        )));
    }
    Ok(())
}

/// Window side actually used on an `h x w` grid and the shift applied on
/// alternating blocks. A grid no larger than the window becomes one window
/// with no shift.
pub fn effective_window(window: usize, h: usize, w: usize) -> Result<(usize, usize)> {
    if h <= window && w <= window {
        if h != w {
            return Err(Error::dim(format!(
                "grid {h}x{w} smaller than window {window} must be square"
            )));
        }
        return Ok((h, 0));
    }
    if h % window != 0 || w % window != 0 {
        return Err(Error::dim(format!(
            "window {window} does not tile the {h}x{w} token grid"
        )));
    }
    Ok((window, window / 2))
}

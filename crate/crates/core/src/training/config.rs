use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ceac::{DnCnnConfig, DnCnnTrainConfig};
use crate::codec::ModelConfig;
use crate::error::{Error, Result};

/// Ablation variants of the transmission system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// SNR-aware codec with refined channel estimation and equalization.
    Full,
    /// Received symbols go to the decoder without equalization.
    NoCeac,
    /// No SNR-aware modules and no equalization.
    SnrUnaware,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoCeac, Variant::SnrUnaware];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCeac => "no_ceac",
            Variant::SnrUnaware => "snr_unaware",
        }
    }

    pub fn snr_aware(self) -> bool {
        self != Variant::SnrUnaware
    }

    pub fn equalizes(self) -> bool {
        self == Variant::Full
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s || v.name().replace('_', "-") == s)
            .ok_or_else(|| {
                Error::arg(format!(
                    "unknown variant {s:?} (expected one of: full, no_ceac, snr_unaware)"
                ))
            })
    }
}

/// End-to-end training settings; loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub model: ModelConfig,
    /// When set, overrides the model's output channels to approach this
    /// code rate from below.
    pub rate_target: Option<f64>,
    pub snr_range_db: (f64, f64),
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fraction of the training images held out for validation.
    pub val_fraction: f64,
    /// Images used per validation pass; 0 uses the whole split.
    pub val_images: usize,
    pub pilot_len: usize,
    /// Side of the correlated fading grid consecutive batch items share.
    pub fading_grid: usize,
    pub dncnn: DnCnnConfig,
    pub dncnn_train: DnCnnTrainConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            model: ModelConfig::cifar(),
            rate_target: None,
            snr_range_db: (1.0, 13.0),
            batch_size: 128,
            epochs: 30,
            learning_rate: 1e-4,
            seed: 0,
            val_fraction: 0.1,
            val_images: 0,
            pilot_len: 64,
            fading_grid: 8,
            dncnn: DnCnnConfig::default(),
            dncnn_train: DnCnnTrainConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(s).map_err(|e| Error::arg(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::arg(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::arg(format!("invalid SNR range [{lo}, {hi}]")));
        }
        if let Some(r) = self.rate_target {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::arg(format!("rate target must be in (0, 1], got {r}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::arg("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::arg("val_fraction must be in [0, 1)"));
        }
        if self.pilot_len == 0 || self.fading_grid == 0 {
            return Err(Error::arg("pilot_len and fading_grid must be positive"));
        }
        self.model_config()?.validate()
    }

    /// Codec configuration after the rate override and the variant's
    /// SNR-awareness are applied.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut m = self.model.clone();
        if let Some(r) = self.rate_target {
            m = m.with_rate(r)?;
        }
        m.snr_aware = self.variant.snr_aware();
        m.snr_range_db = self.snr_range_db;
        Ok(m)
    }
}

/// Uniform SNR draw in dB over the configured range.
pub fn sample_snr<R: Rng + ?Sized>(range: (f64, f64), rng: &mut R) -> f64 {
    let (lo, hi) = range;
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

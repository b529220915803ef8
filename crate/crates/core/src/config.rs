//! Experiment configuration: one declarative file with a section per stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::SynthConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, MfccConfig};
use crate::ivector::{TvConfig, UbmConfig};
use crate::metrics::TdcfParams;
use crate::training::{Shaping, TrainConfig};

/// Network widths: full-size models or reduced ones for small corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelScale {
    #[default]
    Full,
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IvectorConfig {
    pub mfcc: MfccConfig,
    pub ubm: UbmConfig,
    pub tv: TvConfig,
    /// Cap on the frames used for UBM training, taken at an even stride
    /// (0 uses every frame).
    pub max_ubm_frames: usize,
}

impl Default for IvectorConfig {
    fn default() -> Self {
        Self {
            mfcc: MfccConfig::default(),
            ubm: UbmConfig::default(),
            tv: TvConfig::default(),
            max_ubm_frames: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub z_norm: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scale: ModelScale,
    pub synth: SynthConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub ivector: IvectorConfig,
    pub tdcf: TdcfParams,
    pub fusion: FusionConfig,
}

impl ExperimentConfig {
    /// Reduced models, features and i-vector sizes that train in minutes on a
    /// single core.
    pub fn desk() -> Self {
        Self {
            scale: ModelScale::Desk,
            synth: SynthConfig::default(),
            features: FeatureConfig {
                window_ms: 30.0,
                shift_ms: 10.0,
                target_frames: 40,
                wave_segment_samples: 8748,
                ..FeatureConfig::default()
            },
            train: TrainConfig::default(),
            ivector: IvectorConfig {
                ubm: UbmConfig {
                    components: 32,
                    ..UbmConfig::default()
                },
                tv: TvConfig {
                    rank: 50,
                    ..TvConfig::default()
                },
                max_ubm_frames: 20_000,
                ..IvectorConfig::default()
            },
            tdcf: TdcfParams::default(),
            fusion: FusionConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.features.validate(self.synth.sample_rate)?;
        self.train.validate()?;
        self.tdcf.validate()?;
        if self.features.target_frames == 0 || self.features.wave_segment_samples == 0 {
            return Err(Error::Config("target_frames and wave_segment_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn shaping(&self) -> Shaping {
        Shaping {
            target_frames: self.features.target_frames,
            wave_segment_samples: self.features.wave_segment_samples,
        }
    }
}

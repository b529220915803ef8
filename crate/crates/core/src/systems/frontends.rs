use nalgebra::{DMatrix, DVector};
use replayscope_autodiff::{Checkpoint, Tensor};
use serde::{Deserialize, Serialize};

use super::neural::Frontend;
use crate::audio::AudioClip;
use crate::config::{ExperimentConfig, IvectorConfig, ModelScale};
use crate::error::{Error, Result};
use crate::features::{extract_spectro, mfcc_with_deltas, ChannelKind, ChannelStats, FeatureConfig};
use crate::ivector::{
    accumulate_stats, extract_ivector, extract_ivectors, from_checkpoint, to_checkpoint, train_tv, train_ubm,
    GmmModel, TvMatrix,
};
use crate::models::{IvecDnnConfig, ModelConfig, SpecCnnGruConfig, WaveCnnGruConfig};
use crate::training::Example;

fn json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Format(e.to_string()))
}

fn from_json<T: for<'de> Deserialize<'de>>(v: &serde_json::Value) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| Error::Format(format!("frontend state: {e}")))
}

/// Zero-pad a clip that is shorter than `min_len` samples.
fn padded(clip: &AudioClip, min_len: usize) -> std::borrow::Cow<'_, AudioClip> {
    if clip.samples.len() >= min_len {
        return std::borrow::Cow::Borrowed(clip);
    }
    let mut c = clip.clone();
    c.samples.resize(min_len, 0.0);
    std::borrow::Cow::Owned(c)
}

/// Per-channel normalized spectrogram channels.
pub struct SpectroFrontend {
    features: FeatureConfig,
    scale: ModelScale,
    stats: Option<ChannelStats>,
}

impl SpectroFrontend {
    pub fn new(cfg: &ExperimentConfig, channels: Vec<ChannelKind>) -> Result<Self> {
        let features = FeatureConfig {
            channels,
            ..cfg.features.clone()
        };
        features.validate(cfg.synth.sample_rate)?;
        Ok(Self {
            features,
            scale: cfg.scale,
            stats: None,
        })
    }

    fn stats(&self) -> Result<&ChannelStats> {
        self.stats
            .as_ref()
            .ok_or_else(|| Error::Config("spectrogram normalization has not been fitted".into()))
    }
}

impl Frontend for SpectroFrontend {
    fn prepare_train(&mut self, clips: &[AudioClip]) -> Result<Vec<Option<Example>>> {
        let mut tensors = Vec::with_capacity(clips.len());
        for clip in clips {
            tensors.push(match extract_spectro(clip, &self.features) {
                Ok(t) => Some(t),
                Err(Error::Input(m)) => {
                    log::warn!("{m}");
                    None
                }
                Err(e) => return Err(e),
            });
        }
        let stats = ChannelStats::fit(tensors.iter().flatten())?;
        let out = tensors
            .into_iter()
            .map(|t| {
                t.map(|mut t| {
                    stats.apply(&mut t)?;
                    Ok(Example::Spectro(t))
                })
                .transpose()
            })
            .collect::<Result<_>>()?;
        self.stats = Some(stats);
        Ok(out)
    }

    fn prepare(&self, clip: &AudioClip) -> Result<Example> {
        let w = self.features.window_len(clip.sample_rate);
        let mut t = extract_spectro(&padded(clip, w), &self.features)?;
        self.stats()?.apply(&mut t)?;
        Ok(Example::Spectro(t))
    }

    fn model_config(&self) -> Result<ModelConfig> {
        let (bins, ch) = (self.features.bins(), self.features.channels.len());
        Ok(ModelConfig::Spec(match self.scale {
            ModelScale::Desk => SpecCnnGruConfig::desk(bins, ch),
            ModelScale::Full => SpecCnnGruConfig {
                input_bins: bins,
                input_channels: ch,
                ..SpecCnnGruConfig::default()
            },
        }))
    }

    fn save(&self) -> Result<(serde_json::Value, Vec<(String, Tensor)>)> {
        Ok((json(self.stats()?)?, Vec::new()))
    }

    fn load(&mut self, state: &serde_json::Value, _ck: &Checkpoint) -> Result<()> {
        let stats: ChannelStats = from_json(state)?;
        if stats.kinds != self.features.channels {
            return Err(Error::Format("normalization channels do not match the system".into()));
        }
        self.stats = Some(stats);
        Ok(())
    }
}

/// Raw samples for the waveform network.
pub struct WaveFrontend {
    net: WaveCnnGruConfig,
}

impl WaveFrontend {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let net = match cfg.scale {
            ModelScale::Desk => WaveCnnGruConfig::desk(),
            ModelScale::Full => WaveCnnGruConfig::default(),
        };
        if cfg.features.wave_segment_samples < net.min_samples() {
            return Err(Error::Config(format!(
                "wave_segment_samples must be at least {}",
                net.min_samples()
            )));
        }
        Ok(Self { net })
    }

    /// Repeat a clip shorter than the network's receptive minimum.
    fn tiled(&self, samples: &[f64]) -> Vec<f64> {
        let min = self.net.min_samples();
        if samples.len() >= min {
            return samples.to_vec();
        }
        samples.iter().cycle().take(min).copied().collect()
    }
}

impl Frontend for WaveFrontend {
    fn prepare_train(&mut self, clips: &[AudioClip]) -> Result<Vec<Option<Example>>> {
        Ok(clips.iter().map(|c| Some(Example::Wave(c.samples.clone()))).collect())
    }

    fn prepare(&self, clip: &AudioClip) -> Result<Example> {
        Ok(Example::Wave(self.tiled(&clip.samples)))
    }

    fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig::Wave(self.net.clone()))
    }

    fn save(&self) -> Result<(serde_json::Value, Vec<(String, Tensor)>)> {
        Ok((serde_json::Value::Null, Vec::new()))
    }

    fn load(&mut self, _state: &serde_json::Value, _ck: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct IvectorState {
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// MFCC, GMM-UBM and total-variability i-vectors, standardized with
/// training-set statistics.
pub struct IvectorFrontend {
    cfg: IvectorConfig,
    scale: ModelScale,
    fitted: Option<(GmmModel, TvMatrix, IvectorState)>,
}

impl IvectorFrontend {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let iv = &cfg.ivector;
        if iv.ubm.components == 0 || iv.tv.rank == 0 {
            return Err(Error::Config("UBM components and i-vector rank must be positive".into()));
        }
        Ok(Self {
            cfg: iv.clone(),
            scale: cfg.scale,
            fitted: None,
        })
    }

    fn mfcc(&self, clip: &AudioClip) -> Result<DMatrix<f64>> {
        let w = (self.cfg.mfcc.window_ms * clip.sample_rate as f64 / 1000.0).round() as usize;
        mfcc_with_deltas(&padded(clip, w), &self.cfg.mfcc)
    }

    fn standardize(state: &IvectorState, w: &DVector<f64>) -> Vec<f64> {
        w.iter().zip(&state.mean).zip(&state.std).map(|((x, m), s)| (x - m) / s).collect()
    }
}

/// Every `stride`-th row of the stacked frame matrices, at most `cap` rows.
fn pooled_frames(feats: &[&DMatrix<f64>], cap: usize) -> DMatrix<f64> {
    let total: usize = feats.iter().map(|m| m.nrows()).sum();
    let stride = if cap == 0 || total <= cap { 1 } else { total.div_ceil(cap) };
    let dim = feats[0].ncols();
    let rows: Vec<_> = feats
        .iter()
        .flat_map(|m| m.row_iter())
        .step_by(stride)
        .collect();
    let mut out = DMatrix::<f64>::zeros(rows.len(), dim);
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from(r);
    }
    out
}

impl Frontend for IvectorFrontend {
    fn prepare_train(&mut self, clips: &[AudioClip]) -> Result<Vec<Option<Example>>> {
        let mut feats = Vec::with_capacity(clips.len());
        for clip in clips {
            feats.push(match mfcc_with_deltas(clip, &self.cfg.mfcc) {
                Ok(m) => Some(m),
                Err(Error::Input(m)) => {
                    log::warn!("{m}");
                    None
                }
                Err(e) => return Err(e),
            });
        }
        let present: Vec<&DMatrix<f64>> = feats.iter().flatten().collect();
        if present.is_empty() {
            return Err(Error::Input("no training utterance yields MFCC frames".into()));
        }
        let frames = pooled_frames(&present, self.cfg.max_ubm_frames);
        let (ubm, ubm_report) = train_ubm(&frames, &self.cfg.ubm)?;
        log::info!(
            "ivector: UBM of {} components on {} frames, final log-likelihood {:.4}",
            ubm.n_components(),
            frames.nrows(),
            ubm_report.log_likelihood.last().copied().unwrap_or(f64::NAN)
        );
        let stats = present.iter().map(|m| accumulate_stats(m, &ubm)).collect::<Result<Vec<_>>>()?;
        let (tv, _) = train_tv(&stats, &ubm, &self.cfg.tv)?;
        let ivecs = extract_ivectors(&stats, &tv, &ubm)?;
        let r = tv.rank();
        let n = ivecs.len() as f64;
        let mean: Vec<f64> = (0..r).map(|k| ivecs.iter().map(|w| w[k]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..r)
            .map(|k| {
                let v = ivecs.iter().map(|w| (w[k] - mean[k]).powi(2)).sum::<f64>() / n;
                v.sqrt().max(1e-8)
            })
            .collect();
        let state = IvectorState { mean, std };
        let mut it = ivecs.iter();
        let out = feats
            .iter()
            .map(|f| f.as_ref().map(|_| Example::Vector(Self::standardize(&state, it.next().unwrap()))))
            .collect();
        self.fitted = Some((ubm, tv, state));
        Ok(out)
    }

    fn prepare(&self, clip: &AudioClip) -> Result<Example> {
        let (ubm, tv, state) = self
            .fitted
            .as_ref()
            .ok_or_else(|| Error::Config("i-vector extractor has not been trained".into()))?;
        let stats = accumulate_stats(&self.mfcc(clip)?, ubm)?;
        Ok(Example::Vector(Self::standardize(state, &extract_ivector(&stats, tv, ubm)?)))
    }

    fn model_config(&self) -> Result<ModelConfig> {
        let dim = self.cfg.tv.rank;
        Ok(ModelConfig::Ivec(match self.scale {
            ModelScale::Desk => IvecDnnConfig::desk(dim),
            ModelScale::Full => IvecDnnConfig {
                input_dim: dim,
                ..IvecDnnConfig::default()
            },
        }))
    }

    fn save(&self) -> Result<(serde_json::Value, Vec<(String, Tensor)>)> {
        let (ubm, tv, state) = self
            .fitted
            .as_ref()
            .ok_or_else(|| Error::Config("i-vector extractor has not been trained".into()))?;
        Ok((json(state)?, to_checkpoint("", ubm, tv).tensors))
    }

    fn load(&mut self, state: &serde_json::Value, ck: &Checkpoint) -> Result<()> {
        let state: IvectorState = from_json(state)?;
        let (ubm, tv) = from_checkpoint(ck)?;
        if state.mean.len() != tv.rank() || state.std.len() != tv.rank() {
            return Err(Error::Format("i-vector standardization does not match the T matrix".into()));
        }
        self.fitted = Some((ubm, tv, state));
        Ok(())
    }
}

//! Named detection systems behind a common trait, and the registry that
//! builds them from an experiment config or a saved checkpoint.

mod frontends;
mod neural;

use std::collections::BTreeMap;

use replayscope_autodiff::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::features::ChannelKind;
use crate::metrics::{ScoreEntry, ScoreSet};
use crate::training::TrainLog;

pub use frontends::{IvectorFrontend, SpectroFrontend, WaveFrontend};
pub use neural::{Frontend, NeuralDetector};

/// Outcome of fitting a system on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub log: TrainLog,
    /// Training utterances dropped because their features could not be
    /// computed.
    pub skipped: usize,
}

/// A trainable replay detector producing one bona-fide score per clip.
pub trait Detector: Send {
    fn system_id(&self) -> &str;

    fn fit(&mut self, train: &[AudioClip], dev: Option<&[AudioClip]>) -> Result<FitReport>;

    /// Higher means more likely bona fide.
    fn score(&mut self, clips: &[AudioClip]) -> Result<Vec<f64>>;

    fn checkpoint(&self) -> Result<Checkpoint>;

    fn restore(&mut self, checkpoint: &Checkpoint) -> Result<()>;
}

/// Builds an untrained detector for a registered name.
pub type Factory = fn(&str, &ExperimentConfig) -> Result<Box<dyn Detector>>;

/// Metadata stored as JSON alongside every checkpoint. `system` selects the
/// factory on load; `state` is private to the detector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub system: String,
    pub config: ExperimentConfig,
    pub state: serde_json::Value,
}

impl CheckpointMeta {
    pub fn parse(ck: &Checkpoint) -> Result<Self> {
        serde_json::from_str(&ck.meta).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }
}

#[derive(Clone)]
pub struct SystemRegistry {
    factories: BTreeMap<String, Factory>,
}

impl std::fmt::Debug for SystemRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

/// The seven spectrogram channel sets: three singles, three pairs, one triple.
pub const SPEC_SYSTEMS: [&str; 7] = [
    "spec-magnitude",
    "spec-psd",
    "spec-phase",
    "spec-magnitude-psd",
    "spec-magnitude-phase",
    "spec-psd-phase",
    "spec-magnitude-psd-phase",
];

/// Members of the nine-system fusion: every spectrogram system, the raw
/// waveform model and the i-vector classifier.
pub const PRIMARY_SYSTEMS: [&str; 9] = [
    "spec-magnitude",
    "spec-psd",
    "spec-phase",
    "spec-magnitude-psd",
    "spec-magnitude-phase",
    "spec-psd-phase",
    "spec-magnitude-psd-phase",
    "wave",
    "ivector",
];

/// Channel list encoded in a `spec-…` system name.
pub fn spec_channels(name: &str) -> Result<Vec<ChannelKind>> {
    let rest = name
        .strip_prefix("spec-")
        .ok_or_else(|| Error::Config(format!("{name:?} is not a spectrogram system")))?;
    let kinds = rest.split('-').map(str::parse).collect::<Result<Vec<ChannelKind>>>()?;
    for (i, k) in kinds.iter().enumerate() {
        if kinds[..i].contains(k) {
            return Err(Error::Config(format!("{name:?} lists {k} twice")));
        }
    }
    let rank = |k: &ChannelKind| [ChannelKind::Magnitude, ChannelKind::Psd, ChannelKind::Phase].iter().position(|c| c == k);
    if kinds.windows(2).any(|w| rank(&w[0]) > rank(&w[1])) {
        return Err(Error::Config(format!("{name:?}: channels must be ordered magnitude, psd, phase")));
    }
    Ok(kinds)
}

fn spec_factory(name: &str, cfg: &ExperimentConfig) -> Result<Box<dyn Detector>> {
    let frontend = SpectroFrontend::new(cfg, spec_channels(name)?)?;
    Ok(Box::new(NeuralDetector::new(name, cfg.clone(), Box::new(frontend))?))
}

fn wave_factory(name: &str, cfg: &ExperimentConfig) -> Result<Box<dyn Detector>> {
    let frontend = WaveFrontend::new(cfg)?;
    Ok(Box::new(NeuralDetector::new(name, cfg.clone(), Box::new(frontend))?))
}

fn ivector_factory(name: &str, cfg: &ExperimentConfig) -> Result<Box<dyn Detector>> {
    let frontend = IvectorFrontend::new(cfg)?;
    Ok(Box::new(NeuralDetector::new(name, cfg.clone(), Box::new(frontend))?))
}

impl Default for SystemRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl SystemRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// Every spectrogram channel set plus `wave` and `ivector`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        for name in SPEC_SYSTEMS {
            r.register(name, spec_factory);
        }
        r.register("wave", wave_factory);
        r.register("ivector", ivector_factory);
        r
    }

    /// Add or replace a system.
    pub fn register(&mut self, name: &str, factory: Factory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn create(&self, name: &str, cfg: &ExperimentConfig) -> Result<Box<dyn Detector>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.names().collect();
            Error::Config(format!("unknown system {name:?} (known: {})", known.join(", ")))
        })?;
        cfg.validate()?;
        factory(name, cfg)
    }

    /// Rebuild a trained detector from its checkpoint.
    pub fn load(&self, ck: &Checkpoint) -> Result<Box<dyn Detector>> {
        let meta = CheckpointMeta::parse(ck)?;
        let mut det = self.create(&meta.system, &meta.config)?;
        det.restore(ck)?;
        Ok(det)
    }
}

/// Protocol tags of a clip with a placeholder score.
pub fn entry_of_clip(clip: &AudioClip, score: f64) -> ScoreEntry {
    ScoreEntry {
        utterance_id: clip.utterance_id.clone(),
        score,
        label: clip.label,
        attacker_distance: clip.attacker_distance,
        speaker_quality: clip.speaker_quality,
    }
}

/// Score labelled clips into a set ready for the metrics.
pub fn score_clips(det: &mut dyn Detector, clips: &[AudioClip]) -> Result<ScoreSet> {
    let scores = det.score(clips)?;
    let entries = clips.iter().zip(scores).map(|(c, s)| entry_of_clip(c, s)).collect();
    ScoreSet::new(det.system_id(), entries)
}

use replayscope_autodiff::{Checkpoint, Tensor};

use super::{entry_of_clip, CheckpointMeta, Detector, FitReport};
use crate::audio::AudioClip;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelGraph};
use crate::training::{score_dataset, train_model, Dataset, Example};

/// Turns clips into model inputs and owns any state fitted on training data.
pub trait Frontend: Send {
    /// Fit frontend state on the training clips and return their examples;
    /// `None` marks a clip whose features cannot be computed.
    fn prepare_train(&mut self, clips: &[AudioClip]) -> Result<Vec<Option<Example>>>;

    /// Example for scoring; must succeed for every valid clip.
    fn prepare(&self, clip: &AudioClip) -> Result<Example>;

    /// Network for the fitted frontend.
    fn model_config(&self) -> Result<ModelConfig>;

    fn save(&self) -> Result<(serde_json::Value, Vec<(String, Tensor)>)>;

    fn load(&mut self, state: &serde_json::Value, ck: &Checkpoint) -> Result<()>;
}

#[derive(serde::Serialize, serde::Deserialize)]
struct NeuralState {
    model: ModelConfig,
    frontend: serde_json::Value,
}

/// Frontend plus a network trained with the shared training loop.
pub struct NeuralDetector {
    id: String,
    cfg: ExperimentConfig,
    frontend: Box<dyn Frontend>,
    model: Option<ModelGraph>,
    optimizer: Vec<(String, Tensor)>,
}

impl NeuralDetector {
    pub fn new(id: &str, cfg: ExperimentConfig, frontend: Box<dyn Frontend>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            id: id.to_string(),
            cfg,
            frontend,
            model: None,
            optimizer: Vec::new(),
        })
    }

    pub fn model(&self) -> Option<&ModelGraph> {
        self.model.as_ref()
    }

    fn dataset(&self, clips: &[AudioClip]) -> Result<Dataset> {
        let mut d = Dataset::default();
        for clip in clips {
            d.push(self.frontend.prepare(clip)?, entry_of_clip(clip, 0.0));
        }
        Ok(d)
    }
}

impl Detector for NeuralDetector {
    fn system_id(&self) -> &str {
        &self.id
    }

    fn fit(&mut self, train: &[AudioClip], dev: Option<&[AudioClip]>) -> Result<FitReport> {
        let examples = self.frontend.prepare_train(train)?;
        let mut data = Dataset::default();
        let mut skipped = 0;
        for (clip, ex) in train.iter().zip(examples) {
            match ex {
                Some(ex) => data.push(ex, entry_of_clip(clip, 0.0)),
                None => {
                    log::warn!("{}: skipping {}, features unavailable", self.id, clip.utterance_id);
                    skipped += 1;
                }
            }
        }
        if skipped > 0 {
            log::warn!("{}: skipped {skipped} of {} training utterances", self.id, train.len());
        }
        let dev = dev.map(|c| self.dataset(c)).transpose()?;
        let mut model = ModelGraph::build(self.frontend.model_config()?, self.cfg.train.seed)?;
        log::info!("{}: {} trainable parameters", self.id, model.num_parameters());
        let out = train_model(&mut model, &data, dev.as_ref(), &self.cfg.train, &self.cfg.shaping(), &self.cfg.tdcf)?;
        self.optimizer = out.optimizer.export(&model.store);
        self.model = Some(model);
        Ok(FitReport { log: out.log, skipped })
    }

    fn score(&mut self, clips: &[AudioClip]) -> Result<Vec<f64>> {
        let data = self.dataset(clips)?;
        let model = self
            .model
            .as_mut()
            .ok_or_else(|| Error::Config(format!("{} has not been trained", self.id)))?;
        score_dataset(model, &data)
    }

    fn checkpoint(&self) -> Result<Checkpoint> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has not been trained", self.id)))?;
        let (frontend, extra) = self.frontend.save()?;
        let meta = CheckpointMeta {
            system: self.id.clone(),
            config: self.cfg.clone(),
            state: serde_json::to_value(NeuralState {
                model: model.config.clone(),
                frontend,
            })
            .map_err(|e| Error::Format(e.to_string()))?,
        };
        let mut ck = Checkpoint::from_store(meta.to_json()?, &model.store);
        ck.tensors.extend(self.optimizer.iter().cloned());
        ck.tensors.extend(extra);
        Ok(ck)
    }

    fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        let meta = CheckpointMeta::parse(ck)?;
        if meta.system != self.id {
            return Err(Error::Input(format!("checkpoint holds {}, not {}", meta.system, self.id)));
        }
        let state: NeuralState =
            serde_json::from_value(meta.state).map_err(|e| Error::Format(format!("checkpoint state: {e}")))?;
        self.frontend.load(&state.frontend, ck)?;
        let mut model = ModelGraph::build(state.model, 0)?;
        ck.restore_into(&mut model.store)?;
        self.optimizer = ck.tensors.iter().filter(|(n, _)| n.starts_with("opt.")).cloned().collect();
        self.model = Some(model);
        Ok(())
    }
}

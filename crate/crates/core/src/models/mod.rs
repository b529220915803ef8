//! Network families: the spectrogram CNN-GRU, the raw-waveform CNN-GRU and
//! the fully connected i-vector classifier. All three end in a two-node
//! output whose bona-fide softmax probability is the detection score.

mod ivec;
mod spec;
mod wave;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use replayscope_autodiff::{Graph, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SpectroTensor;

pub use ivec::{IvecDnn, IvecDnnConfig};
pub use spec::{SpecCnnGru, SpecCnnGruConfig};
pub use wave::{WaveCnnGru, WaveCnnGruConfig};

/// Batch-norm running-statistics momentum used by every residual block.
pub const BN_MOMENTUM: f64 = 0.9;

/// Layer name and output shape, recorded during a forward pass.
pub type ShapeTrace = Vec<(String, Vec<usize>)>;

pub struct Forward {
    pub logits: Var,
    /// Utterance embedding the center loss acts on.
    pub embedding: Var,
}

/// A buildable network family. Implementations own only layer handles; the
/// parameters live in the [`ParamStore`] passed to [`Graph`].
pub trait Network: Send + Sync {
    fn embedding_dim(&self) -> usize;

    fn forward(&self, g: &mut Graph<'_>, x: Var, training: bool, trace: &mut ShapeTrace) -> Result<Forward>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelConfig {
    Spec(SpecCnnGruConfig),
    Wave(WaveCnnGruConfig),
    Ivec(IvecDnnConfig),
}

impl ModelConfig {
    pub fn family(&self) -> &'static str {
        match self {
            ModelConfig::Spec(_) => "spec",
            ModelConfig::Wave(_) => "wave",
            ModelConfig::Ivec(_) => "ivec",
        }
    }
}

/// Parameters plus the layer structure that consumes them.
pub struct ModelGraph {
    pub config: ModelConfig,
    pub store: ParamStore,
    net: Box<dyn Network>,
}

impl std::fmt::Debug for ModelGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelGraph")
            .field("config", &self.config)
            .field("parameters", &self.num_parameters())
            .finish()
    }
}

impl ModelGraph {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net: Box<dyn Network> = match &config {
            ModelConfig::Spec(c) => Box::new(SpecCnnGru::build(c, &mut store, &mut rng)?),
            ModelConfig::Wave(c) => Box::new(WaveCnnGru::build(c, &mut store, &mut rng)?),
            ModelConfig::Ivec(c) => Box::new(IvecDnn::build(c, &mut store, &mut rng)?),
        };
        Ok(Self { config, store, net })
    }

    pub fn net(&self) -> &dyn Network {
        self.net.as_ref()
    }

    /// Split borrow for building a graph over this model's parameters.
    pub fn parts(&mut self) -> (&dyn Network, &mut ParamStore) {
        (self.net.as_ref(), &mut self.store)
    }

    /// Count of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.store
            .trainable_ids()
            .map(|id| self.store.value(id).len())
            .sum()
    }

    /// Evaluation-mode logits `[N, 2]` and the layer shape trace.
    pub fn logits(&mut self, input: Tensor) -> Result<(Tensor, ShapeTrace)> {
        let (net, store) = self.parts();
        let mut g = Graph::new(store);
        let x = g.input(input);
        let mut trace = ShapeTrace::new();
        let out = net.forward(&mut g, x, false, &mut trace)?;
        Ok((g.value(out.logits).clone(), trace))
    }

    /// Bona-fide probability for each item of an evaluation batch.
    pub fn infer_scores(&mut self, input: Tensor) -> Result<Vec<f64>> {
        let (logits, _) = self.logits(input)?;
        logits.data().chunks(2).map(bonafide_probability).collect()
    }
}

/// Softmax probability of the first (bona-fide) node of a two-node output.
pub fn bonafide_probability(logits: &[f64]) -> Result<f64> {
    match logits {
        [a, b] if a.is_finite() && b.is_finite() => {
            let d = b - a;
            Ok(if d >= 0.0 {
                let e = (-d).exp();
                e / (1.0 + e)
            } else {
                1.0 / (1.0 + d.exp())
            })
        }
        [_, _] => Err(Error::Numeric(format!("non-finite logits {logits:?}"))),
        _ => Err(Error::Input(format!("expected two logits, got {}", logits.len()))),
    }
}

/// Score one utterance with a freshly built evaluation graph.
pub fn infer_score(model: &mut ModelGraph, input: Tensor) -> Result<f64> {
    if input.shape().first() != Some(&1) {
        return Err(Error::Input(format!(
            "single-utterance scoring takes a batch of one, got shape {:?}",
            input.shape()
        )));
    }
    Ok(model.infer_scores(input)?[0])
}

/// Stack equally sized spectrogram tensors into `[N, C, T, F]`.
pub fn spectro_batch(items: &[&SpectroTensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| Error::Input("empty batch".into()))?;
    let (c, t, f) = (first.n_channels(), first.frames, first.bins);
    let mut data = Vec::with_capacity(items.len() * c * t * f);
    for it in items {
        if (it.n_channels(), it.frames, it.bins) != (c, t, f) {
            return Err(Error::Input(format!(
                "batch mixes {}x{}x{} with {}x{}x{}",
                t,
                f,
                c,
                it.frames,
                it.bins,
                it.n_channels()
            )));
        }
        data.extend(it.to_channel_major());
    }
    Ok(Tensor::new(vec![items.len(), c, t, f], data)?)
}

/// Stack equal-length rows into `[N, 1, L]` (waveforms) or `[N, D]` (vectors).
pub fn row_batch(rows: &[&[f64]], with_channel_axis: bool) -> Result<Tensor> {
    let len = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || rows.iter().any(|r| r.len() != len) {
        return Err(Error::Input("batch rows must be non-empty and equally long".into()));
    }
    let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    let shape = if with_channel_axis {
        vec![rows.len(), 1, len]
    } else {
        vec![rows.len(), len]
    };
    Ok(Tensor::new(shape, data)?)
}

pub(crate) fn record(g: &Graph<'_>, trace: &mut ShapeTrace, name: &str, v: Var) {
    trace.push((name.to_string(), g.shape(v).to_vec()));
}

pub(crate) fn check_positive(what: &str, values: &[usize]) -> Result<()> {
    if values.iter().any(|&v| v == 0) {
        return Err(Error::Config(format!("{what} must be positive, got {values:?}")));
    }
    Ok(())
}

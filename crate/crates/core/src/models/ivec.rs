use rand::Rng;
use replayscope_autodiff::layers::Dense;
use replayscope_autodiff::{Graph, ParamStore, Var};
use serde::{Deserialize, Serialize};

use super::{check_positive, record, Forward, Network, ShapeTrace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IvecDnnConfig {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
}

impl Default for IvecDnnConfig {
    fn default() -> Self {
        Self {
            input_dim: 200,
            hidden_layers: 3,
            hidden_units: 1024,
        }
    }
}

impl IvecDnnConfig {
    pub fn desk(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_layers: 3,
            hidden_units: 64,
        }
    }
}

/// Fully connected ReLU classifier over i-vectors.
#[derive(Debug, Clone)]
pub struct IvecDnn {
    cfg: IvecDnnConfig,
    hidden: Vec<Dense>,
    output: Dense,
}

impl IvecDnn {
    pub fn build(cfg: &IvecDnnConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        check_positive("i-vector DNN sizes", &[cfg.input_dim, cfg.hidden_layers, cfg.hidden_units])?;
        let mut din = cfg.input_dim;
        let hidden = (0..cfg.hidden_layers)
            .map(|i| {
                let d = Dense::new(store, &format!("hidden{}", i + 1), din, cfg.hidden_units, rng);
                din = cfg.hidden_units;
                d
            })
            .collect();
        let output = Dense::new(store, "output", din, 2, rng);
        Ok(Self {
            cfg: cfg.clone(),
            hidden,
            output,
        })
    }
}

impl Network for IvecDnn {
    fn embedding_dim(&self) -> usize {
        self.cfg.hidden_units
    }

    fn forward(&self, g: &mut Graph<'_>, x: Var, _training: bool, trace: &mut ShapeTrace) -> Result<Forward> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.cfg.input_dim {
            return Err(Error::Input(format!(
                "i-vector DNN expects [N, {}], got {shape:?}",
                self.cfg.input_dim
            )));
        }
        let mut h = x;
        for (i, layer) in self.hidden.iter().enumerate() {
            let z = layer.forward(g, h)?;
            h = g.relu(z);
            record(g, trace, &format!("hidden{}", i + 1), h);
        }
        let logits = self.output.forward(g, h)?;
        record(g, trace, "output", logits);
        Ok(Forward { logits, embedding: h })
    }
}

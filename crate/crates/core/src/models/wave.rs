use rand::Rng;
use replayscope_autodiff::layers::{BatchNorm, Conv1d, Dense, Gru, Padding};
use replayscope_autodiff::{Graph, ParamStore, Var};
use serde::{Deserialize, Serialize};

use super::{check_positive, record, Forward, Network, ShapeTrace, BN_MOMENTUM};
use crate::error::{Error, Result};

const POOL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveCnnGruConfig {
    /// Maps of the strided frame-level convolution.
    pub frame_maps: usize,
    pub frame_kernel: usize,
    pub frame_stride: usize,
    /// Output maps of the four residual blocks; the last is the frame
    /// representation width fed to the GRU.
    pub block_maps: [usize; 4],
    pub block_kernel: usize,
    pub gru_units: usize,
    pub dense_units: usize,
}

impl Default for WaveCnnGruConfig {
    fn default() -> Self {
        Self {
            frame_maps: 128,
            frame_kernel: 3,
            frame_stride: 3,
            block_maps: [128, 128, 128, 128],
            block_kernel: 3,
            gru_units: 512,
            dense_units: 64,
        }
    }
}

impl WaveCnnGruConfig {
    pub fn desk() -> Self {
        Self {
            frame_maps: 8,
            block_maps: [8, 16, 16, 16],
            gru_units: 32,
            dense_units: 16,
            ..Self::default()
        }
    }

    /// Shortest input that survives the frame layer and four pooling stages.
    pub fn min_samples(&self) -> usize {
        self.frame_kernel + self.frame_stride * (POOL.pow(4) - 1)
    }
}

#[derive(Debug, Clone, Copy)]
struct ResBlock1d {
    bn1: BatchNorm,
    conv1: Conv1d,
    bn2: BatchNorm,
    conv2: Conv1d,
    shortcut: Option<Conv1d>,
}

impl ResBlock1d {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let shortcut = (cin != cout)
            .then(|| Conv1d::new(store, &format!("{name}.shortcut"), cin, cout, 1, 1, Padding::Valid, rng));
        Self {
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), cin, BN_MOMENTUM),
            conv1: Conv1d::new(store, &format!("{name}.conv1"), cin, cout, kernel, 1, Padding::Same, rng),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), cout, BN_MOMENTUM),
            conv2: Conv1d::new(store, &format!("{name}.conv2"), cout, cout, kernel, 1, Padding::Same, rng),
            shortcut,
        }
    }

    fn forward(&self, g: &mut Graph<'_>, x: Var, training: bool) -> Result<Var> {
        let a = self.bn1.forward(g, x, training)?;
        let a = g.relu(a);
        let h = self.conv1.forward(g, a)?;
        let h = self.bn2.forward(g, h, training)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, h)?;
        let skip = match &self.shortcut {
            Some(c) => c.forward(g, a)?,
            None => x,
        };
        Ok(g.add(h, skip)?)
    }
}

/// Raw-waveform CNN-GRU over `[N, 1, L]` inputs.
#[derive(Debug, Clone)]
pub struct WaveCnnGru {
    cfg: WaveCnnGruConfig,
    frame: Conv1d,
    blocks: Vec<ResBlock1d>,
    bn_out: BatchNorm,
    gru: Gru,
    dense1: Dense,
    output: Dense,
}

impl WaveCnnGru {
    pub fn build(cfg: &WaveCnnGruConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        check_positive(
            "waveform model sizes",
            &[
                cfg.frame_maps,
                cfg.frame_kernel,
                cfg.frame_stride,
                cfg.block_kernel,
                cfg.gru_units,
                cfg.dense_units,
            ],
        )?;
        check_positive("waveform block maps", &cfg.block_maps)?;
        let frame = Conv1d::new(
            store,
            "frame",
            1,
            cfg.frame_maps,
            cfg.frame_kernel,
            cfg.frame_stride,
            Padding::Valid,
            rng,
        );
        let mut cin = cfg.frame_maps;
        let mut blocks = Vec::with_capacity(4);
        for (i, &maps) in cfg.block_maps.iter().enumerate() {
            blocks.push(ResBlock1d::new(store, &format!("block{}", i + 1), cin, maps, cfg.block_kernel, rng));
            cin = maps;
        }
        let bn_out = BatchNorm::new(store, "block_out.bn", cin, BN_MOMENTUM);
        let gru = Gru::new(store, "gru", cin, cfg.gru_units, rng);
        let dense1 = Dense::new(store, "dense1", cfg.gru_units, cfg.dense_units, rng);
        let output = Dense::new(store, "output", cfg.dense_units, 2, rng);
        Ok(Self {
            cfg: cfg.clone(),
            frame,
            blocks,
            bn_out,
            gru,
            dense1,
            output,
        })
    }
}

impl Network for WaveCnnGru {
    fn embedding_dim(&self) -> usize {
        self.cfg.dense_units
    }

    fn forward(&self, g: &mut Graph<'_>, x: Var, training: bool, trace: &mut ShapeTrace) -> Result<Forward> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != 1 {
            return Err(Error::Input(format!("waveform model expects [N, 1, L], got {shape:?}")));
        }
        if shape[2] < self.cfg.min_samples() {
            return Err(Error::Input(format!(
                "waveform of {} samples is shorter than the {}-sample receptive field",
                shape[2],
                self.cfg.min_samples()
            )));
        }
        let mut h = self.frame.forward(g, x)?;
        record(g, trace, "frame", h);
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(g, h, training)?;
            h = g.max_pool1d(h, POOL, POOL)?;
            record(g, trace, &format!("block{}", i + 1), h);
        }
        let h = self.bn_out.forward(g, h, training)?;
        let h = g.relu(h);
        let seq = g.channels_to_seq(h)?;
        record(g, trace, "sequence", seq);
        let state = self.gru.final_state(g, seq)?;
        record(g, trace, "gru", state);
        let embedding = self.dense1.forward(g, state)?;
        record(g, trace, "dense1", embedding);
        let a = g.relu(embedding);
        let logits = self.output.forward(g, a)?;
        record(g, trace, "output", logits);
        Ok(Forward { logits, embedding })
    }
}

use rand::Rng;
use replayscope_autodiff::layers::{BatchNorm, Conv2d, Dense, Gru, Padding};
use replayscope_autodiff::{Graph, ParamStore, Var};
use serde::{Deserialize, Serialize};

use super::{check_positive, record, Forward, Network, ShapeTrace, BN_MOMENTUM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecCnnGruConfig {
    pub input_bins: usize,
    pub input_channels: usize,
    pub conv1_maps: usize,
    pub conv1_kernel: (usize, usize),
    /// Output maps of the three residual blocks.
    pub res_maps: [usize; 3],
    pub res_kernel: (usize, usize),
    /// (time, frequency) stride of each residual block's first convolution.
    pub res_stride: (usize, usize),
    pub gru_units: usize,
    pub dense_units: usize,
}

impl Default for SpecCnnGruConfig {
    fn default() -> Self {
        Self {
            input_bins: 1025,
            input_channels: 1,
            conv1_maps: 16,
            conv1_kernel: (3, 7),
            res_maps: [32, 64, 128],
            res_kernel: (3, 5),
            res_stride: (2, 4),
            gru_units: 512,
            dense_units: 64,
        }
    }
}

impl SpecCnnGruConfig {
    /// Reduced widths for quick experiments on small corpora.
    pub fn desk(input_bins: usize, input_channels: usize) -> Self {
        Self {
            input_bins,
            input_channels,
            conv1_maps: 4,
            res_maps: [8, 16, 16],
            gru_units: 32,
            dense_units: 16,
            ..Self::default()
        }
    }

    /// Frequency width left after the three strided blocks.
    pub fn final_bins(&self) -> usize {
        (0..3).fold(self.input_bins, |w, _| w.div_ceil(self.res_stride.1))
    }
}

/// Pre-activation residual block: BN-ReLU-conv-BN-ReLU-conv plus a shortcut
/// that is the identity, or a strided 1x1 convolution when the shape changes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ResBlock2d {
    bn1: BatchNorm,
    conv1: Conv2d,
    bn2: BatchNorm,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

impl ResBlock2d {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let shortcut = (cin != cout || stride != (1, 1)).then(|| {
            Conv2d::new(store, &format!("{name}.shortcut"), cin, cout, (1, 1), stride, Padding::Same, rng)
        });
        Self {
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), cin, BN_MOMENTUM),
            conv1: Conv2d::new(store, &format!("{name}.conv1"), cin, cout, kernel, stride, Padding::Same, rng),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), cout, BN_MOMENTUM),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), cout, cout, kernel, (1, 1), Padding::Same, rng),
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

/// Spectrogram CNN-GRU over `[N, C, T, F]` inputs.
#[derive(Debug, Clone)]
pub struct SpecCnnGru {
    cfg: SpecCnnGruConfig,
    conv1: Conv2d,
    blocks: [ResBlock2d; 3],
    bn_out: BatchNorm,
    gru: Gru,
    dense1: Dense,
    output: Dense,
}

impl SpecCnnGru {
    pub fn build(cfg: &SpecCnnGruConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        if !(1..=3).contains(&cfg.input_channels) {
            return Err(Error::Config(format!(
                "spectrogram model takes 1-3 input channels, got {}",
                cfg.input_channels
            )));
        }
        check_positive(
            "spectrogram model sizes",
            &[
                cfg.input_bins,
                cfg.conv1_maps,
                cfg.conv1_kernel.0,
                cfg.conv1_kernel.1,
                cfg.res_maps[0],
                cfg.res_maps[1],
                cfg.res_maps[2],
                cfg.res_kernel.0,
                cfg.res_kernel.1,
                cfg.res_stride.0,
                cfg.res_stride.1,
                cfg.gru_units,
                cfg.dense_units,
            ],
        )?;
        let conv1 = Conv2d::new(
            store,
            "conv1",
            cfg.input_channels,
            cfg.conv1_maps,
            cfg.conv1_kernel,
            (1, 1),
            Padding::Same,
            rng,
        );
        let mut cin = cfg.conv1_maps;
        let mut blocks = Vec::with_capacity(3);
        for (i, &maps) in cfg.res_maps.iter().enumerate() {
            blocks.push(ResBlock2d::new(
                store,
                &format!("res{}", i + 1),
                cin,
                maps,
                cfg.res_kernel,
                cfg.res_stride,
                rng,
            ));
            cin = maps;
        }
        let bn_out = BatchNorm::new(store, "res_out.bn", cin, BN_MOMENTUM);
        let gru = Gru::new(store, "gru", cin, cfg.gru_units, rng);
        let dense1 = Dense::new(store, "dense1", cfg.gru_units, cfg.dense_units, rng);
        let output = Dense::new(store, "output", cfg.dense_units, 2, rng);
        Ok(Self {
            cfg: cfg.clone(),
            conv1,
            blocks: [blocks[0], blocks[1], blocks[2]],
            bn_out,
            gru,
            dense1,
            output,
        })
    }
}

impl Network for SpecCnnGru {
    fn embedding_dim(&self) -> usize {
        self.cfg.dense_units
    }

    fn forward(&self, g: &mut Graph<'_>, x: Var, training: bool, trace: &mut ShapeTrace) -> Result<Forward> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.cfg.input_channels || shape[3] != self.cfg.input_bins {
            return Err(Error::Input(format!(
                "spectrogram model expects [N, {}, T, {}], got {shape:?}",
                self.cfg.input_channels, self.cfg.input_bins
            )));
        }
        let mut h = self.conv1.forward(g, x)?;
        record(g, trace, "conv1", h);
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(g, h, training)?;
            record(g, trace, &format!("res{}", i + 1), h);
        }
        let h = self.bn_out.forward(g, h, training)?;
        let h = g.relu(h);
        let width = g.shape(h)[3];
        let pooled = g.max_pool2d(h, (1, width), (1, width))?;
        record(g, trace, "pool", pooled);
        let seq = g.channels_to_seq(pooled)?;
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

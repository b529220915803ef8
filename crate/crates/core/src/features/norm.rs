use serde::{Deserialize, Serialize};

use super::{ChannelKind, SpectroTensor};
use crate::error::{Error, Result};

/// Global per-channel mean and standard deviation, accumulated over a
/// training split and stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub kinds: Vec<ChannelKind>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn fit<'a>(tensors: impl IntoIterator<Item = &'a SpectroTensor>) -> Result<Self> {
        let mut kinds: Option<Vec<ChannelKind>> = None;
        let mut sum = Vec::new();
        let mut sq = Vec::new();
        let mut count = 0usize;
        for t in tensors {
            match &kinds {
                None => {
                    kinds = Some(t.channel_kinds.clone());
                    sum = vec![0.0; t.n_channels()];
                    sq = vec![0.0; t.n_channels()];
                }
                Some(k) if *k != t.channel_kinds => {
                    return Err(Error::Input("channel layout differs between utterances".into()))
                }
                _ => {}
            }
            for cell in t.values.chunks_exact(t.n_channels()) {
                for (c, v) in cell.iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            count += t.frames * t.bins;
        }
        let kinds = kinds.ok_or_else(|| Error::Input("no tensors to fit statistics on".into()))?;
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-8))
            .collect();
        Ok(Self { kinds, mean, std })
    }

    pub fn apply(&self, t: &mut SpectroTensor) -> Result<()> {
        if t.channel_kinds != self.kinds {
            return Err(Error::Input(format!(
                "normalisation fitted on {:?}, tensor has {:?}",
                self.kinds, t.channel_kinds
            )));
        }
        let c = self.kinds.len();
        for cell in t.values.chunks_exact_mut(c) {
            for (k, v) in cell.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
        Ok(())
    }
}

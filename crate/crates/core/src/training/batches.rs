use rand::seq::SliceRandom;
use rand::Rng;
use replayscope_autodiff::Tensor;

use super::{Dataset, Example};
use crate::error::{Error, Result};
use crate::features::{fit_length, segment_waveform, Mode, SpectroTensor};
use crate::models::{row_batch, spectro_batch};

/// Fixed training lengths per input kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shaping {
    pub target_frames: usize,
    pub wave_segment_samples: usize,
}

impl Default for Shaping {
    fn default() -> Self {
        Self {
            target_frames: 120,
            wave_segment_samples: 26_244,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// Positions in the dataset.
    pub indices: Vec<usize>,
    pub input: Tensor,
    pub labels: Vec<usize>,
}

/// Lazily shaped batches of one epoch. Crop offsets are drawn from the
/// generator as each batch is produced.
pub struct BatchStream<'a, R: Rng> {
    data: &'a Dataset,
    labels: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    shaping: Shaping,
    rng: &'a mut R,
}

/// Shuffle the dataset with `rng` and cut it into batches of `batch_size`
/// (the last one may be smaller).
pub fn make_batches<'a, R: Rng>(
    data: &'a Dataset,
    shaping: &Shaping,
    batch_size: usize,
    rng: &'a mut R,
) -> Result<BatchStream<'a, R>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let labels = data.labels()?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    Ok(BatchStream {
        data,
        labels,
        order,
        pos: 0,
        batch_size,
        shaping: *shaping,
        rng,
    })
}

impl<R: Rng> Iterator for BatchStream<'_, R> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Some(self.shape(&indices).map(|input| Batch { indices, input, labels }))
    }
}

impl<R: Rng> BatchStream<'_, R> {
    fn shape(&mut self, indices: &[usize]) -> Result<Tensor> {
        match &self.data.examples[indices[0]] {
            Example::Spectro(_) => {
                let shaped: Vec<SpectroTensor> = indices
                    .iter()
                    .map(|&i| match &self.data.examples[i] {
                        Example::Spectro(t) => Ok(fit_length(t, self.shaping.target_frames, Mode::Train, self.rng)),
                        _ => Err(Error::Input("dataset mixes example kinds".into())),
                    })
                    .collect::<Result<_>>()?;
                spectro_batch(&shaped.iter().collect::<Vec<_>>())
            }
            Example::Wave(_) => {
                let shaped: Vec<Vec<f64>> = indices
                    .iter()
                    .map(|&i| match &self.data.examples[i] {
                        Example::Wave(w) => Ok(segment_waveform(w, self.shaping.wave_segment_samples, Mode::Train, self.rng)),
                        _ => Err(Error::Input("dataset mixes example kinds".into())),
                    })
                    .collect::<Result<_>>()?;
                row_batch(&shaped.iter().map(Vec::as_slice).collect::<Vec<_>>(), true)
            }
            Example::Vector(_) => {
                let rows: Vec<&[f64]> = indices
                    .iter()
                    .map(|&i| match &self.data.examples[i] {
                        Example::Vector(v) => Ok(v.as_slice()),
                        _ => Err(Error::Input("dataset mixes example kinds".into())),
                    })
                    .collect::<Result<_>>()?;
                row_batch(&rows, false)
            }
        }
    }
}

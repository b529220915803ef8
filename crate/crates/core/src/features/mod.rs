//! STFT front end: magnitude, phase and PSD channels, MFCCs with deltas,
//! fixed-length shaping for training batches and a binary feature container.

mod container;
mod mfcc;
mod norm;
mod spectrum;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use container::{read_features, write_features};
pub use mfcc::{dct_ii, deltas, mel_filterbank, mfcc_with_deltas, MfccConfig};
pub use norm::ChannelStats;
pub use spectrum::{extract_spectro, hamming, spectro_channels, stft, Spectrum, MAGNITUDE_EPS, PSD_EPS};

pub const ALLOWED_NFFT: [usize; 3] = [512, 1024, 2048];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Magnitude,
    Phase,
    Psd,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 3] = [ChannelKind::Magnitude, ChannelKind::Phase, ChannelKind::Psd];

    pub fn code(self) -> u8 {
        match self {
            ChannelKind::Magnitude => 0,
            ChannelKind::Phase => 1,
            ChannelKind::Psd => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::Magnitude => "magnitude",
            ChannelKind::Phase => "phase",
            ChannelKind::Psd => "psd",
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown channel {s:?} (magnitude, phase, psd)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub window_ms: f64,
    pub shift_ms: f64,
    pub n_fft: usize,
    pub channels: Vec<ChannelKind>,
    pub target_frames: usize,
    pub wave_segment_samples: usize,
    pub pre_emphasis: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_ms: 50.0,
            shift_ms: 20.0,
            n_fft: 2048,
            channels: vec![ChannelKind::Magnitude],
            target_frames: 120,
            wave_segment_samples: 26_244,
            pre_emphasis: false,
        }
    }
}

impl FeatureConfig {
    pub fn window_len(&self, sample_rate: u32) -> usize {
        (self.window_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self, sample_rate: u32) -> usize {
        (self.shift_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !ALLOWED_NFFT.contains(&self.n_fft) {
            return Err(Error::Config(format!(
                "n_fft {} not one of {ALLOWED_NFFT:?}",
                self.n_fft
            )));
        }
        let w = self.window_len(sample_rate);
        let h = self.hop_len(sample_rate);
        if w < 2 || h < 1 {
            return Err(Error::Config(format!(
                "window {} ms / shift {} ms too short at {sample_rate} Hz",
                self.window_ms, self.shift_ms
            )));
        }
        if w > self.n_fft {
            return Err(Error::Config(format!(
                "window of {w} samples exceeds n_fft {}",
                self.n_fft
            )));
        }
        if self.channels.is_empty() {
            return Err(Error::Config("channel list is empty".into()));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if self.channels[..i].contains(c) {
                return Err(Error::Config(format!("channel {c} listed twice")));
            }
        }
        if self.target_frames < 1 || self.wave_segment_samples < 1 {
            return Err(Error::Config("target lengths must be at least 1".into()));
        }
        Ok(())
    }
}

/// Real array of `frames x bins x channels`, frame-major, channel fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectroTensor {
    pub frames: usize,
    pub bins: usize,
    pub channel_kinds: Vec<ChannelKind>,
    pub values: Vec<f64>,
}

impl SpectroTensor {
    pub fn new(frames: usize, bins: usize, channel_kinds: Vec<ChannelKind>, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * bins * channel_kinds.len() {
            return Err(Error::Input(format!(
                "feature tensor of {frames}x{bins}x{} needs {} values, got {}",
                channel_kinds.len(),
                frames * bins * channel_kinds.len(),
                values.len()
            )));
        }
        Ok(Self {
            frames,
            bins,
            channel_kinds,
            values,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.channel_kinds.len()
    }

    pub fn get(&self, frame: usize, bin: usize, ch: usize) -> f64 {
        self.values[(frame * self.bins + bin) * self.n_channels() + ch]
    }

    fn frame_stride(&self) -> usize {
        self.bins * self.n_channels()
    }

    /// Values laid out channel-major as `[channels, frames, bins]`, the layout
    /// the convolutional models consume.
    pub fn to_channel_major(&self) -> Vec<f64> {
        let c = self.n_channels();
        let plane = self.frames * self.bins;
        let mut out = vec![0.0; self.values.len()];
        for (i, chunk) in self.values.chunks_exact(c).enumerate() {
            for (k, v) in chunk.iter().enumerate() {
                out[k * plane + i] = *v;
            }
        }
        out
    }

    /// Copy of the given frame range, wrapping around the end.
    fn frames_wrapped(&self, start: usize, count: usize) -> Vec<f64> {
        let stride = self.frame_stride();
        let mut out = Vec::with_capacity(count * stride);
        for f in 0..count {
            let src = (start + f) % self.frames;
            out.extend_from_slice(&self.values[src * stride..(src + 1) * stride]);
        }
        out
    }
}

/// Concatenate channels of tensors with identical frames and bins.
pub fn stack_channels(tensors: &[SpectroTensor]) -> Result<SpectroTensor> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::Config("nothing to stack".into()))?;
    for t in tensors {
        if (t.frames, t.bins) != (first.frames, first.bins) {
            return Err(Error::Input(format!(
                "cannot stack {}x{} with {}x{}",
                first.frames, first.bins, t.frames, t.bins
            )));
        }
    }
    let kinds: Vec<ChannelKind> = tensors.iter().flat_map(|t| t.channel_kinds.iter().copied()).collect();
    let mut values = Vec::with_capacity(first.frames * first.bins * kinds.len());
    for cell in 0..first.frames * first.bins {
        for t in tensors {
            let c = t.n_channels();
            values.extend_from_slice(&t.values[cell * c..(cell + 1) * c]);
        }
    }
    SpectroTensor::new(first.frames, first.bins, kinds, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Start offset and whether tiling is needed to fit `len` items into `target`.
fn crop_start(len: usize, target: usize, rng: &mut impl Rng) -> usize {
    if len > target {
        rng.gen_range(0..=len - target)
    } else {
        0
    }
}

/// Fix the time axis for training: random crop when longer than
/// `target_frames`, tile then crop from the start when shorter. Evaluation
/// mode passes the whole utterance through.
pub fn fit_length(t: &SpectroTensor, target_frames: usize, mode: Mode, rng: &mut impl Rng) -> SpectroTensor {
    if mode == Mode::Eval || t.frames == target_frames {
        return t.clone();
    }
    let start = crop_start(t.frames, target_frames, rng);
    SpectroTensor {
        frames: target_frames,
        bins: t.bins,
        channel_kinds: t.channel_kinds.clone(),
        values: t.frames_wrapped(start, target_frames),
    }
}

/// Same crop/tile rule as [`fit_length`] applied to raw samples.
pub fn segment_waveform(samples: &[f64], target: usize, mode: Mode, rng: &mut impl Rng) -> Vec<f64> {
    if mode == Mode::Eval || samples.len() == target || samples.is_empty() {
        return samples.to_vec();
    }
    let start = crop_start(samples.len(), target, rng);
    (0..target).map(|i| samples[(start + i) % samples.len()]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(frames: usize, bins: usize, ch: usize) -> SpectroTensor {
        let kinds = ChannelKind::ALL[..ch].to_vec();
        let values = (0..frames * bins * ch).map(|v| v as f64).collect();
        SpectroTensor::new(frames, bins, kinds, values).unwrap()
    }

    #[test]
    fn fit_length_tiles_short_input() {
        let t = ramp(50, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = fit_length(&t, 120, Mode::Train, &mut rng);
        assert_eq!(out.frames, 120);
        let order: Vec<usize> = (0..120).map(|f| out.get(f, 0, 0) as usize / 3).collect();
        let want: Vec<usize> = (0..50).chain(0..50).chain(0..20).collect();
        assert_eq!(order, want);
    }

    #[test]
    fn fit_length_identity_and_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = ramp(120, 4, 2);
        assert_eq!(fit_length(&t, 120, Mode::Train, &mut rng), t);
        let long = ramp(300, 4, 1);
        assert_eq!(fit_length(&long, 120, Mode::Eval, &mut rng), long);
        let crop = fit_length(&long, 120, Mode::Train, &mut rng);
        let s = crop.get(0, 0, 0) as usize / 4;
        for f in 0..120 {
            assert_eq!(crop.get(f, 0, 0) as usize / 4, s + f);
        }
    }

    #[test]
    fn segment_tiles_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..10_000).map(|v| v as f64).collect();
        let y = segment_waveform(&x, 26_244, Mode::Train, &mut rng);
        assert_eq!(y.len(), 26_244);
        assert_eq!(&y[..10_000], &x[..]);
        assert_eq!(&y[10_000..20_000], &x[..]);
        assert_eq!(&y[20_000..], &x[..6_244]);
        let exact: Vec<f64> = (0..26_244).map(|v| v as f64).collect();
        assert_eq!(segment_waveform(&exact, 26_244, Mode::Train, &mut rng), exact);
    }

    #[test]
    fn stacking_preserves_channels() {
        let a = ramp(4, 5, 1);
        let mut b = ramp(4, 5, 1);
        b.channel_kinds = vec![ChannelKind::Psd];
        b.values.iter_mut().for_each(|v| *v = -*v);
        let s = stack_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.channel_kinds, vec![ChannelKind::Magnitude, ChannelKind::Psd]);
        for f in 0..4 {
            for k in 0..5 {
                assert_eq!(s.get(f, k, 0), a.get(f, k, 0));
                assert_eq!(s.get(f, k, 1), b.get(f, k, 0));
            }
        }
        assert_eq!(stack_channels(&[a.clone()]).unwrap(), a);
        assert!(stack_channels(&[a, ramp(5, 5, 1)]).is_err());
    }

    #[test]
    fn channel_major_layout() {
        let t = ramp(2, 3, 2);
        let cm = t.to_channel_major();
        assert_eq!(cm[0], t.get(0, 0, 0));
        assert_eq!(cm[6 + 4], t.get(1, 1, 1));
    }

    #[test]
    fn config_validation() {
        let mut c = FeatureConfig::default();
        assert!(c.validate(16_000).is_ok());
        c.n_fft = 512;
        assert!(c.validate(16_000).is_err());
        c.window_ms = 30.0;
        c.shift_ms = 10.0;
        assert!(c.validate(16_000).is_ok());
        c.n_fft = 1000;
        assert!(c.validate(16_000).is_err());
        c.n_fft = 1024;
        c.channels.clear();
        assert!(c.validate(16_000).is_err());
    }
}

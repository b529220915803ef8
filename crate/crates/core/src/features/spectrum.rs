use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use super::{ChannelKind, FeatureConfig, SpectroTensor};
use crate::audio::AudioClip;
use crate::error::{Error, Result};

pub const MAGNITUDE_EPS: f64 = 1e-7;
pub const PSD_EPS: f64 = 1e-7;

/// Symmetric Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// One-sided short-time spectrum, `frames x bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: usize,
    pub sample_rate: u32,
    /// Sum of squared window coefficients.
    pub window_energy: f64,
    pub data: Vec<Complex<f64>>,
}

impl Spectrum {
    pub fn frames(&self) -> usize {
        self.data.len() / self.bins
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, Complex<f64>> {
        self.data.chunks_exact(self.bins)
    }
}

pub(crate) fn frame_count(n: usize, w: usize, h: usize) -> usize {
    (n - w) / h + 1
}

/// Hamming-windowed frames zero-padded to `n_fft`; keeps bins `0..=n_fft/2`.
pub(crate) fn stft_raw(samples: &[f64], sample_rate: u32, w: usize, h: usize, n_fft: usize) -> Result<Spectrum> {
    if samples.len() < w {
        return Err(Error::Input(format!(
            "{} samples is shorter than one {w}-sample window",
            samples.len()
        )));
    }
    let window = hamming(w);
    let frames = frame_count(samples.len(), w, h);
    let bins = n_fft / 2 + 1;
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let seg = &samples[f * h..f * h + w];
        for (b, (x, wv)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *b = Complex::new(x * wv, 0.0);
        }
        buf[w..].iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrum {
        bins,
        sample_rate,
        window_energy: window.iter().map(|v| v * v).sum(),
        data,
    })
}

pub fn stft(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Spectrum> {
    cfg.validate(clip.sample_rate)?;
    let w = cfg.window_len(clip.sample_rate);
    let h = cfg.hop_len(clip.sample_rate);
    if cfg.pre_emphasis {
        let mut x = clip.samples.clone();
        for i in (1..x.len()).rev() {
            x[i] -= 0.97 * x[i - 1];
        }
        stft_raw(&x, clip.sample_rate, w, h, cfg.n_fft)
    } else {
        stft_raw(&clip.samples, clip.sample_rate, w, h, cfg.n_fft)
    }
}

fn channel_value(kind: ChannelKind, x: Complex<f64>, psd_norm: f64) -> f64 {
    match kind {
        ChannelKind::Magnitude => (x.norm() + MAGNITUDE_EPS).ln(),
        ChannelKind::Phase => {
            if x.re == 0.0 && x.im == 0.0 {
                0.0
            } else {
                let a = x.im.atan2(x.re);
                // atan2 yields -pi for (negative, -0.0); fold it onto pi.
                if a == -PI {
                    PI
                } else {
                    a
                }
            }
        }
        ChannelKind::Psd => 10.0 * (x.norm_sqr() / psd_norm + PSD_EPS).log10(),
    }
}

/// Log magnitude, principal phase and PSD (dB) channels in `channels` order.
pub fn spectro_channels(spec: &Spectrum, channels: &[ChannelKind]) -> Result<SpectroTensor> {
    if channels.is_empty() {
        return Err(Error::Config("channel list is empty".into()));
    }
    let psd_norm = spec.sample_rate as f64 * spec.window_energy;
    let mut values = Vec::with_capacity(spec.data.len() * channels.len());
    for x in &spec.data {
        for &k in channels {
            values.push(channel_value(k, *x, psd_norm));
        }
    }
    SpectroTensor::new(spec.frames(), spec.bins, channels.to_vec(), values)
}

/// STFT followed by the channels listed in `cfg`.
pub fn extract_spectro(clip: &AudioClip, cfg: &FeatureConfig) -> Result<SpectroTensor> {
    spectro_channels(&stft(clip, cfg)?, &cfg.channels)
}

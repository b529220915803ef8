use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::spectrum::stft_raw;
use crate::audio::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub window_ms: f64,
    pub shift_ms: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub n_ceps: usize,
    /// Half-width of the regression window for deltas.
    pub delta_window: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            shift_ms: 10.0,
            n_fft: 512,
            n_mels: 40,
            n_ceps: 20,
            delta_window: 2,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale from 0 Hz to Nyquist,
/// `n_mels x (n_fft/2 + 1)`.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let bins = n_fft / 2 + 1;
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    (0..n_mels)
        .map(|m| {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= c {
                        (f - lo) / (c - lo)
                    } else {
                        (hi - f) / (hi - c)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II, first `n_out` coefficients.
pub fn dct_ii(x: &[f64], n_out: usize) -> Vec<f64> {
    let m = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / m).cos())
                .sum();
            let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            s * scale
        })
        .collect()
}

/// Regression deltas over `+-n` frames with edge frames replicated.
pub fn deltas(rows: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let t = rows.len();
    let denom = 2.0 * (1..=n).map(|k| (k * k) as f64).sum::<f64>();
    (0..t)
        .map(|i| {
            let dim = rows[i].len();
            (0..dim)
                .map(|d| {
                    (1..=n)
                        .map(|k| {
                            let next = &rows[(i + k).min(t - 1)];
                            let prev = &rows[i.saturating_sub(k)];
                            k as f64 * (next[d] - prev[d])
                        })
                        .sum::<f64>()
                        / denom
                })
                .collect()
        })
        .collect()
}

const LOG_FLOOR: f64 = 1e-10;

/// Static MFCCs with deltas and delta-deltas, `frames x 3*n_ceps`.
pub fn mfcc_with_deltas(clip: &AudioClip, cfg: &MfccConfig) -> Result<DMatrix<f64>> {
    let fs = clip.sample_rate;
    let w = (cfg.window_ms * fs as f64 / 1000.0).round() as usize;
    let h = (cfg.shift_ms * fs as f64 / 1000.0).round() as usize;
    if w < 2 || h < 1 || w > cfg.n_fft || cfg.n_ceps > cfg.n_mels || cfg.n_ceps == 0 || cfg.delta_window == 0 {
        return Err(Error::Config(format!("inconsistent MFCC settings {cfg:?}")));
    }
    let spec = stft_raw(&clip.samples, fs, w, h, cfg.n_fft)?;
    let bank = mel_filterbank(cfg.n_mels, cfg.n_fft, fs);
    let statics: Vec<Vec<f64>> = spec
        .rows()
        .map(|row| {
            let energies: Vec<f64> = bank
                .iter()
                .map(|filt| {
                    let e: f64 = filt.iter().zip(row).map(|(a, x)| a * x.norm_sqr()).sum();
                    e.max(LOG_FLOOR).ln()
                })
                .collect();
            dct_ii(&energies, cfg.n_ceps)
        })
        .collect();
    let d1 = deltas(&statics, cfg.delta_window);
    let d2 = deltas(&d1, cfg.delta_window);
    let width = 3 * cfg.n_ceps;
    Ok(DMatrix::from_fn(statics.len(), width, |r, c| {
        let (src, k) = (c / cfg.n_ceps, c % cfg.n_ceps);
        [&statics, &d1, &d2][src][r][k]
    }))
}

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use super::{AudioClip, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadOptions {
    /// Linearly resample other rates to [`Self::target_rate`] instead of failing.
    pub resample: bool,
    pub target_rate: u32,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self {
            resample: false,
            target_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

/// Read a mono WAV or FLAC file. Integer samples are scaled by `1 / 2^(bits-1)`
/// (`1/32768` for 16-bit). Labels stay unknown until joined with a protocol.
pub fn read_audio(path: &Path, opts: ReadOptions) -> Result<AudioClip> {
    let mut magic = [0u8; 4];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map_err(|e| Error::io(path, e))?;
    let (samples, rate) = match &magic {
        b"RIFF" => read_wav(path)?,
        b"fLaC" => read_flac(path)?,
        _ => {
            return Err(Error::Format(format!(
                "{}: neither RIFF/WAVE nor FLAC",
                path.display()
            )))
        }
    };
    let samples = if rate == opts.target_rate {
        samples
    } else if opts.resample {
        resample_linear(&samples, rate, opts.target_rate)
    } else {
        return Err(Error::Format(format!(
            "{}: sample rate {rate} Hz, expected {} Hz (pass --resample to convert)",
            path.display(),
            opts.target_rate
        )));
    };
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    AudioClip::new(id, samples, opts.target_rate)
}

fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    let samples = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<Vec<_>, _>>()
        }
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>(),
    }
    .map_err(|e| wav_err(path, e))?;
    Ok((samples, spec.sample_rate))
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

fn read_flac(path: &Path) -> Result<(Vec<f64>, u32)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = claxon::FlacReader::new(BufReader::new(file))
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let info = reader.streaminfo();
    if info.channels != 1 {
        return Err(Error::Format(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            info.channels
        )));
    }
    let scale = 1.0 / (1u64 << (info.bits_per_sample - 1)) as f64;
    let samples = reader
        .samples()
        .map(|s| s.map(|v| v as f64 * scale))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok((samples, info.sample_rate))
}

fn resample_linear(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    let n_out = ((x.len() as u64 * to as u64) / from as u64).max(1) as usize;
    let ratio = from as f64 / to as f64;
    (0..n_out)
        .map(|i| {
            let pos = i as f64 * ratio;
            let i0 = (pos.floor() as usize).min(x.len() - 1);
            let i1 = (i0 + 1).min(x.len() - 1);
            let frac = pos - i0 as f64;
            x[i0] * (1.0 - frac) + x[i1] * frac
        })
        .collect()
}

/// Write a clip as mono 16-bit PCM WAV.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &clip.samples {
        w.write_sample(quantize_i16(s)).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

pub(crate) fn quantize_i16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

//! Synthetic replay corpus.
//!
//! Bona-fide clips are harmonic-plus-noise "speech": a speaker-specific f0
//! contour, per-syllable formant envelopes, spectral tilt and aspiration noise,
//! recorded close to the microphone in one of three rooms. Spoof clip `i`
//! replays the clean source of bona-fide clip `i` through a loudspeaker
//! (windowed-sinc low-pass whose stop edge depends on quality), the room
//! (exponentially decaying noise impulse response, stronger with distance),
//! distance attenuation and white channel noise. Both classes share the same
//! ambient noise floor and pass through a capture device whose band edge is
//! drawn per clip, so a mild loudspeaker roll-off is not a give-away on its own.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioClip, Grade, Label, ProtocolEntry, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::features::{stft, FeatureConfig};

const FIR_TAPS: usize = 257;
/// Source peak is normalised here before gains, leaving headroom for reverb.
const SOURCE_RMS: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub n_utts_per_class: usize,
    /// Clip duration drawn uniformly from this range, seconds.
    pub duration_range: (f64, f64),
    pub sample_rate: u32,
    /// Loudspeaker stop-band edge per quality class A, B, C (Hz).
    pub replay_lowpass_cutoff: [f64; 3],
    /// Reverberation decay (time to -60 dB) per room, seconds.
    pub reverb_decay: [f64; 3],
    /// Level of the room tail relative to the direct path for a close talker, dB.
    pub bonafide_reverb_db: f64,
    /// Room tail level for replayed speech per attacker distance A, B, C, dB.
    pub replay_reverb_db: [f64; 3],
    /// Extra attenuation per attacker distance A, B, C, dB.
    pub distance_attenuation_db: [f64; 3],
    /// Replay-channel white noise relative to the replayed signal, dB.
    pub noise_snr_db: f64,
    /// Ambient white noise relative to the source level, both classes, dB.
    pub ambient_snr_db: f64,
    /// Random per-utterance recording gain range, dB.
    pub gain_range_db: (f64, f64),
    /// Stop edge of the capture device, drawn uniformly per clip (Hz); edges
    /// at or above Nyquist leave the clip unfiltered.
    pub capture_cutoff_range: (f64, f64),
    pub id_prefix: String,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_speakers: 10,
            n_utts_per_class: 100,
            duration_range: (0.6, 1.0),
            sample_rate: DEFAULT_SAMPLE_RATE,
            replay_lowpass_cutoff: [7000.0, 5000.0, 3000.0],
            reverb_decay: [0.15, 0.3, 0.5],
            bonafide_reverb_db: -20.0,
            replay_reverb_db: [-14.0, -10.0, -6.0],
            distance_attenuation_db: [0.0, 4.0, 8.0],
            noise_snr_db: 45.0,
            ambient_snr_db: 50.0,
            gain_range_db: (-6.0, 0.0),
            capture_cutoff_range: (6000.0, 8000.0),
            id_prefix: "utt".into(),
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth: {m}")));
        if self.n_speakers < 1 || self.n_utts_per_class < 1 {
            return bad("n_speakers and n_utts_per_class must be at least 1".into());
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        let (lo, hi) = self.duration_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("duration_range {lo}..{hi} is not a positive interval"));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        for c in self.replay_lowpass_cutoff {
            if !(c > 0.0 && c < nyquist) {
                return bad(format!("cutoff {c} Hz outside (0, {nyquist})"));
            }
        }
        if self.reverb_decay.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return bad("reverb_decay entries must be positive".into());
        }
        let finite = [self.noise_snr_db, self.ambient_snr_db, self.bonafide_reverb_db]
            .into_iter()
            .chain(self.replay_reverb_db)
            .chain(self.distance_attenuation_db)
            .chain([self.gain_range_db.0, self.gain_range_db.1]);
        for v in finite {
            if !v.is_finite() {
                return bad("SNR, level and gain settings must be finite".into());
            }
        }
        if self.gain_range_db.0 > self.gain_range_db.1 {
            return bad("gain_range_db is reversed".into());
        }
        let (clo, chi) = self.capture_cutoff_range;
        if !(clo > 0.0 && clo <= chi && chi.is_finite()) {
            return bad(format!("capture_cutoff_range {clo}..{chi} is not a positive interval"));
        }
        if self.id_prefix.is_empty() || self.id_prefix.contains(char::is_whitespace) {
            return bad("id_prefix must be a non-empty token".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Speaker {
    f0: f64,
    formants: [f64; 3],
    bandwidths: [f64; 3],
    tilt_db_per_oct: f64,
    breath_db: f64,
}

impl Speaker {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Self {
            f0: rng.gen_range(90.0..230.0),
            formants: [
                rng.gen_range(350.0..800.0),
                rng.gen_range(1000.0..2000.0),
                rng.gen_range(2300.0..3200.0),
            ],
            bandwidths: [
                rng.gen_range(60.0..120.0),
                rng.gen_range(80.0..160.0),
                rng.gen_range(120.0..250.0),
            ],
            tilt_db_per_oct: rng.gen_range(-9.0..-4.0),
            breath_db: rng.gen_range(-28.0..-16.0),
        }
    }
}

/// Three-pole resonance envelope with a global tilt, linear amplitude at `f`.
fn vocal_envelope(f: f64, formants: &[f64; 3], bw: &[f64; 3], tilt_db_per_oct: f64) -> f64 {
    let mut gain = 0.0;
    for (fc, b) in formants.iter().zip(bw) {
        let d = (f - fc) / (b / 2.0);
        gain += 1.0 / (1.0 + d * d);
    }
    let octaves = (f.max(50.0) / 100.0).log2();
    (gain + 0.02) * 10f64.powf(tilt_db_per_oct * octaves / 20.0)
}

fn clean_source(spk: &Speaker, n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Syllable plan: alternating voiced bursts and short gaps.
    let mut env = vec![0.0; n];
    let mut syllables: Vec<(usize, usize, [f64; 3])> = Vec::new();
    let mut t = (rng.gen_range(0.02..0.08) * fs) as usize;
    while t < n {
        let len = (rng.gen_range(0.12..0.26) * fs) as usize;
        let end = (t + len).min(n);
        let shift = [
            rng.gen_range(0.75..1.3),
            rng.gen_range(0.75..1.3),
            rng.gen_range(0.9..1.1),
        ];
        let formants = [
            spk.formants[0] * shift[0],
            spk.formants[1] * shift[1],
            spk.formants[2] * shift[2],
        ];
        let peak = rng.gen_range(0.6..1.0);
        for (i, e) in env[t..end].iter_mut().enumerate() {
            let x = i as f64 / (end - t).max(1) as f64;
            *e = peak * (PI * x).sin().powf(0.6);
        }
        syllables.push((t, end, formants));
        t = end + (rng.gen_range(0.03..0.10) * fs) as usize;
    }

    // f0 contour: declination, slow intonation and jitter.
    let inton_rate = rng.gen_range(1.5..3.5);
    let inton_depth = rng.gen_range(0.04..0.12);
    let decl = rng.gen_range(0.0..0.15);
    let jitter = Normal::new(0.0, 0.003).expect("valid sigma");
    let dur = n as f64 / fs;
    let nyquist = fs / 2.0;
    let mut phase = rng.gen_range(0.0..2.0 * PI);
    let mut y = vec![0.0; n];
    let mut amps: Vec<f64> = Vec::new();
    let mut current = usize::MAX;
    let mut noise_state = 0.0;
    let breath = 10f64.powf(spk.breath_db / 20.0);
    for (i, out) in y.iter_mut().enumerate() {
        let tt = i as f64 / fs;
        let f0 = spk.f0
            * (1.0 - decl * tt / dur)
            * (1.0 + inton_depth * (2.0 * PI * inton_rate * tt).sin())
            * (1.0 + jitter.sample(rng));
        phase = (phase + 2.0 * PI * f0 / fs) % (2.0 * PI * 1e3);
        let e = env[i];
        let white: f64 = rng.sample(StandardNormal);
        // One-pole smoothing gives the aspiration a downward tilt.
        noise_state = 0.6 * noise_state + 0.4 * white;
        if e == 0.0 {
            *out = 0.002 * noise_state;
            continue;
        }
        let syl = syllables
            .iter()
            .position(|&(s, e2, _)| i >= s && i < e2)
            .unwrap_or(0);
        if syl != current {
            current = syl;
            let formants = syllables[syl].2;
            let k_max = (nyquist / spk.f0).floor() as usize;
            amps = (1..=k_max)
                .map(|k| vocal_envelope(k as f64 * spk.f0, &formants, &spk.bandwidths, spk.tilt_db_per_oct))
                .collect();
        }
        let mut v = 0.0;
        for (k, a) in amps.iter().enumerate() {
            let kf = (k + 1) as f64;
            if kf * f0 >= nyquist {
                break;
            }
            v += a * (kf * phase).sin();
        }
        *out = e * (v + breath * 8.0 * noise_state) + 0.002 * noise_state;
    }
    let rms = (y.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
    y.iter_mut().for_each(|v| *v *= SOURCE_RMS / rms);
    y
}

/// Blackman-windowed sinc low-pass whose stop band starts at `stop_hz`.
fn lowpass_taps(stop_hz: f64, fs: f64) -> Vec<f64> {
    let m = FIR_TAPS;
    let transition = 5.5 * fs / m as f64;
    let fc = ((stop_hz - transition / 2.0) / fs).max(1.0 / fs);
    let mid = (m - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..m)
        .map(|i| {
            let x = i as f64 - mid;
            let sinc = if x == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * x).sin() / (PI * x) };
            let w = 0.42 - 0.5 * (2.0 * PI * i as f64 / (m - 1) as f64).cos()
                + 0.08 * (4.0 * PI * i as f64 / (m - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Direct path plus an exponentially decaying noise tail at `tail_db` energy.
fn room_response(decay_s: f64, tail_db: f64, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let len = ((decay_s * fs) as usize).max(2);
    let tau = decay_s / 6.9078; // amplitude e-folding for 60 dB
    let mut h: Vec<f64> = (0..len)
        .map(|i| {
            let g: f64 = rng.sample(StandardNormal);
            g * (-(i as f64 / fs) / tau).exp()
        })
        .collect();
    h[0] = 0.0;
    let energy: f64 = h.iter().map(|v| v * v).sum();
    let scale = 10f64.powf(tail_db / 20.0) / energy.sqrt().max(1e-12);
    h.iter_mut().for_each(|v| *v *= scale);
    h[0] = 1.0;
    h
}

struct Convolver {
    planner: FftPlanner<f64>,
}

impl Convolver {
    fn new() -> Self {
        Self { planner: FftPlanner::new() }
    }

    /// Linear convolution truncated to the length of `x`.
    fn apply(&mut self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let full = x.len() + h.len() - 1;
        let n = full.next_power_of_two();
        let fwd: Arc<dyn Fft<f64>> = self.planner.plan_fft_forward(n);
        let inv: Arc<dyn Fft<f64>> = self.planner.plan_fft_inverse(n);
        let mut a: Vec<Complex<f64>> = (0..n).map(|i| Complex::new(x.get(i).copied().unwrap_or(0.0), 0.0)).collect();
        let mut b: Vec<Complex<f64>> = (0..n).map(|i| Complex::new(h.get(i).copied().unwrap_or(0.0), 0.0)).collect();
        fwd.process(&mut a);
        fwd.process(&mut b);
        a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
        inv.process(&mut a);
        a.iter().take(x.len()).map(|c| c.re / n as f64).collect()
    }

    /// Zero-phase application of a linear-phase FIR: the output is shifted
    /// back by the group delay.
    fn centered(&mut self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let delay = h.len() / 2;
        let mut padded = x.to_vec();
        padded.resize(x.len() + delay, 0.0);
        self.apply(&padded, h)[delay..].to_vec()
    }

    /// Capture-device low-pass; a stop edge at or above Nyquist is a no-op.
    fn capture(&mut self, x: Vec<f64>, stop_hz: f64, fs: f64) -> Vec<f64> {
        if stop_hz >= fs / 2.0 {
            return x;
        }
        self.centered(&x, &lowpass_taps(stop_hz, fs))
    }
}

fn add_white(y: &mut [f64], rms_ref: f64, snr_db: f64, rng: &mut ChaCha8Rng) {
    let sigma = rms_ref * 10f64.powf(-snr_db / 20.0);
    for v in y.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *v += sigma * g;
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn db(v: f64) -> f64 {
    10f64.powf(v / 20.0)
}

fn finish(mut y: Vec<f64>) -> Vec<f64> {
    y.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    y
}

/// Replay configuration for spoof `i`: the nine (distance, quality) cells in turn.
pub(crate) fn spoof_config(i: usize) -> (Grade, Grade) {
    (Grade::ALL[(i / 3) % 3], Grade::ALL[i % 3])
}

/// Generate `2 * n_utts_per_class` clips with matching protocol entries.
/// Bona-fide clip `i` and its replay are adjacent, bona fide first.
pub fn synthesize_corpus(cfg: &SynthConfig) -> Result<(Vec<AudioClip>, Vec<ProtocolEntry>)> {
    cfg.validate()?;
    let fs = cfg.sample_rate as f64;
    let speakers: Vec<Speaker> = (0..cfg.n_speakers)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            rng.set_stream(1 << 40 | s as u64);
            Speaker::draw(&mut rng)
        })
        .collect();
    let filters: Vec<Vec<f64>> = cfg
        .replay_lowpass_cutoff
        .iter()
        .map(|&c| lowpass_taps(c, fs))
        .collect();
    let mut conv = Convolver::new();
    let mut clips = Vec::with_capacity(2 * cfg.n_utts_per_class);
    for i in 0..cfg.n_utts_per_class {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(i as u64);
        let spk = &speakers[i % cfg.n_speakers];
        let dur = rng.gen_range(cfg.duration_range.0..=cfg.duration_range.1);
        let n = ((dur * fs) as usize).max(1);
        let source = clean_source(spk, n, fs, &mut rng);
        let room = rng.gen_range(0..3);
        let env_id = format!("room{room}");
        let gain = db(rng.gen_range(cfg.gain_range_db.0..=cfg.gain_range_db.1));

        let h_bona = room_response(cfg.reverb_decay[room], cfg.bonafide_reverb_db, fs, &mut rng);
        let mut bona: Vec<f64> = conv.apply(&source, &h_bona).iter().map(|v| v * gain).collect();
        add_white(&mut bona, SOURCE_RMS, cfg.ambient_snr_db, &mut rng);
        let (clo, chi) = cfg.capture_cutoff_range;
        let bona = conv.capture(bona, rng.gen_range(clo..=chi), fs);

        let (d, q) = spoof_config(i);
        let played = conv.centered(&source, &filters[q.index()]);
        let h_replay = room_response(cfg.reverb_decay[room], cfg.replay_reverb_db[d.index()], fs, &mut rng);
        let atten = gain * db(-cfg.distance_attenuation_db[d.index()]);
        let mut spoof: Vec<f64> = conv.apply(&played, &h_replay).iter().map(|v| v * atten).collect();
        let level = rms(&spoof);
        add_white(&mut spoof, level, cfg.noise_snr_db, &mut rng);
        add_white(&mut spoof, SOURCE_RMS, cfg.ambient_snr_db, &mut rng);
        let spoof = conv.capture(spoof, rng.gen_range(clo..=chi), fs);

        let mut b = AudioClip::new(format!("{}_{:05}", cfg.id_prefix, 2 * i), finish(bona), cfg.sample_rate)?;
        b.label = Label::Bonafide;
        b.env_id = env_id.clone();
        let mut s = AudioClip::new(format!("{}_{:05}", cfg.id_prefix, 2 * i + 1), finish(spoof), cfg.sample_rate)?;
        s.label = Label::Spoof;
        s.attacker_distance = Some(d);
        s.speaker_quality = Some(q);
        s.env_id = env_id;
        clips.push(b);
        clips.push(s);
    }
    let entries = clips.iter().map(ProtocolEntry::of_clip).collect();
    Ok((clips, entries))
}

/// Mean per-frame energy (dB) of STFT bins at or above `cutoff_hz`, using the
/// default 50 ms / 20 ms analysis.
pub fn band_energy_above(clip: &AudioClip, cutoff_hz: f64) -> Result<f64> {
    let cfg = FeatureConfig::default();
    let spec = stft(clip, &cfg)?;
    let bin_hz = clip.sample_rate as f64 / cfg.n_fft as f64;
    let first = (cutoff_hz / bin_hz).ceil() as usize;
    let mut total = 0.0;
    for frame in spec.rows() {
        total += frame.iter().skip(first).map(|c| c.norm_sqr()).sum::<f64>();
    }
    Ok(10.0 * (total / spec.frames().max(1) as f64 + 1e-30).log10())
}

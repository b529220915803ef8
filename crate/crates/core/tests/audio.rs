use replayscope::audio::{
    band_energy_above, read_audio, synthesize_corpus, write_wav, AudioClip, Grade, Label, ReadOptions, SynthConfig,
};
use replayscope::Error;

fn write_pcm16(path: &std::path::Path, rate: u32, channels: u16, samples: &[i16]) {
    let spec = hound::WavSpec {
        channels,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for s in samples {
        w.write_sample(*s).unwrap();
    }
    w.finalize().unwrap();
}

#[test]
fn zero_file_reads_as_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("z.wav");
    write_pcm16(&p, 16_000, 1, &vec![0; 16_000]);
    let clip = read_audio(&p, ReadOptions::default()).unwrap();
    assert_eq!(clip.samples.len(), 16_000);
    assert!(clip.samples.iter().all(|&s| s == 0.0));
    assert_eq!(clip.sample_rate, 16_000);
    assert_eq!(clip.label, Label::Unknown);
    assert_eq!(clip.utterance_id, "z");
}

#[test]
fn int16_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.wav");
    write_pcm16(&p, 16_000, 1, &[16_384; 100]);
    let clip = read_audio(&p, ReadOptions::default()).unwrap();
    assert!(clip.samples.iter().all(|&s| s == 0.5));
}

#[test]
fn stereo_and_odd_rate_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.wav");
    write_pcm16(&p, 16_000, 2, &[0; 200]);
    assert!(matches!(read_audio(&p, ReadOptions::default()), Err(Error::Format(_))));
    let p = dir.path().join("r.wav");
    write_pcm16(&p, 8_000, 1, &[100; 800]);
    assert!(matches!(read_audio(&p, ReadOptions::default()), Err(Error::Format(_))));
    let opts = ReadOptions {
        resample: true,
        ..ReadOptions::default()
    };
    let clip = read_audio(&p, opts).unwrap();
    assert_eq!(clip.samples.len(), 1_600);
    assert_eq!(clip.sample_rate, 16_000);
}

#[test]
fn missing_file_is_io_error() {
    let err = read_audio(std::path::Path::new("/nonexistent/x.wav"), ReadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}

#[test]
fn wav_roundtrip_within_one_lsb() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rt.wav");
    let samples: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.013).sin() * 0.9).collect();
    let clip = AudioClip::new("rt", samples.clone(), 16_000).unwrap();
    write_wav(&p, &clip).unwrap();
    let back = read_audio(&p, ReadOptions::default()).unwrap();
    for (a, b) in back.samples.iter().zip(&samples) {
        assert!((a - b).abs() <= 1.0 / 32_768.0);
    }
    let p2 = dir.path().join("rt2.wav");
    write_wav(&p2, &back).unwrap();
    let again = read_audio(&p2, ReadOptions::default()).unwrap();
    assert_eq!(again.samples, back.samples);
}

fn small_cfg(n: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_speakers: 3,
        n_utts_per_class: n,
        duration_range: (0.4, 0.6),
        rng_seed: seed,
        ..SynthConfig::default()
    }
}

#[test]
fn synth_counts_and_invariants() {
    let (clips, entries) = synthesize_corpus(&small_cfg(10, 7)).unwrap();
    assert_eq!(clips.len(), 20);
    assert_eq!(entries.len(), 20);
    assert_eq!(clips.iter().filter(|c| c.label == Label::Bonafide).count(), 10);
    for c in &clips {
        c.validate().unwrap();
        assert_eq!(c.speaker_quality.is_some(), c.label == Label::Spoof);
    }
}

#[test]
fn synth_is_deterministic() {
    let a = synthesize_corpus(&small_cfg(4, 11)).unwrap();
    let b = synthesize_corpus(&small_cfg(4, 11)).unwrap();
    assert_eq!(a, b);
    let c = synthesize_corpus(&small_cfg(4, 12)).unwrap();
    assert_ne!(a.0[0].samples, c.0[0].samples);
}

#[test]
fn quality_c_replay_loses_high_band() {
    let cfg = small_cfg(9, 3);
    let (clips, _) = synthesize_corpus(&cfg).unwrap();
    let cutoff = cfg.replay_lowpass_cutoff[Grade::C.index()];
    let mut checked = 0;
    for pair in clips.chunks(2) {
        let (bona, spoof) = (&pair[0], &pair[1]);
        if spoof.speaker_quality != Some(Grade::C) {
            continue;
        }
        let gap = band_energy_above(bona, cutoff).unwrap() - band_energy_above(spoof, cutoff).unwrap();
        assert!(gap >= 20.0, "{}: gap {gap:.1} dB", spoof.utterance_id);
        checked += 1;
    }
    assert_eq!(checked, 3);
}

#[test]
fn invalid_synth_config() {
    let mut cfg = small_cfg(0, 0);
    assert!(matches!(synthesize_corpus(&cfg), Err(Error::Config(_))));
    cfg.n_utts_per_class = 1;
    cfg.replay_lowpass_cutoff[0] = 8_000.0;
    assert!(synthesize_corpus(&cfg).is_err());
    cfg.replay_lowpass_cutoff[0] = 7_000.0;
    cfg.noise_snr_db = f64::NAN;
    assert!(synthesize_corpus(&cfg).is_err());
}

use std::fs;

use replayscope::audio::{synthesize_corpus, AudioClip, Label, SynthConfig};
use replayscope::config::{ExperimentConfig, ModelScale};
use replayscope::features::ChannelKind;
use replayscope::metrics::compute_eer;
use replayscope::training::TrainLog;
use replayscope::pipeline;
use replayscope::systems::{
    score_clips, spec_channels, CheckpointMeta, Detector, FitReport, SystemRegistry, PRIMARY_SYSTEMS, SPEC_SYSTEMS,
};
use replayscope::{Error, ErrorCategory};
use replayscope_autodiff::{Checkpoint, Tensor};

fn corpus(n: usize, seed: u64, prefix: &str) -> Vec<AudioClip> {
    let cfg = ExperimentConfig::desk();
    synthesize_corpus(&SynthConfig {
        n_utts_per_class: n,
        rng_seed: seed,
        id_prefix: prefix.into(),
        ..cfg.synth
    })
    .unwrap()
    .0
}

#[test]
fn builtins_cover_the_nine_primary_systems() {
    let r = SystemRegistry::with_builtins();
    let mut names: Vec<&str> = r.names().collect();
    let mut want = PRIMARY_SYSTEMS.to_vec();
    names.sort_unstable();
    want.sort_unstable();
    assert_eq!(names, want);
    assert_eq!(SPEC_SYSTEMS.len(), 7);
    let err = r.create("spec-loudness", &ExperimentConfig::desk()).err().unwrap();
    assert_eq!(err.category(), ErrorCategory::Config);
    assert!(err.to_string().contains("spec-magnitude"));
}

#[test]
fn spec_names_map_to_ordered_channels() {
    use ChannelKind::*;
    assert_eq!(spec_channels("spec-magnitude").unwrap(), [Magnitude]);
    assert_eq!(spec_channels("spec-psd-phase").unwrap(), [Psd, Phase]);
    assert_eq!(spec_channels("spec-magnitude-psd-phase").unwrap(), [Magnitude, Psd, Phase]);
    for bad in ["spec-", "spec-phase-magnitude", "spec-magnitude-magnitude", "wave"] {
        assert!(matches!(spec_channels(bad), Err(Error::Config(_))), "{bad}");
    }
}

#[test]
fn config_toml_roundtrip_and_rejection() {
    for cfg in [ExperimentConfig::default(), ExperimentConfig::desk()] {
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
    assert_eq!(ExperimentConfig::desk().scale, ModelScale::Desk);
    let partial = ExperimentConfig::from_toml("[train]\nepochs = 3\n").unwrap();
    assert_eq!(partial.train.epochs, 3);
    assert_eq!(partial.features, ExperimentConfig::default().features);
    assert!(matches!(ExperimentConfig::from_toml("[train]\nepoch = 3\n"), Err(Error::Config(_))));
    // 50 ms at 16 kHz is 800 samples, more than a 512-point FFT holds.
    let mut cfg = ExperimentConfig::default();
    cfg.features.n_fft = 512;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let shipped = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml");
    assert_eq!(ExperimentConfig::load(shipped.as_ref()).unwrap(), ExperimentConfig::desk());
}

#[test]
fn checkpoint_reload_scores_like_the_trained_detector() {
    let train = corpus(10, 3, "tr");
    let dev = corpus(5, 4, "dv");
    let mut cfg = ExperimentConfig::desk();
    cfg.train.epochs = 2;
    let registry = SystemRegistry::with_builtins();
    for system in ["ivector", "spec-magnitude-phase"] {
        let mut det = registry.create(system, &cfg).unwrap();
        assert!(det.checkpoint().is_err());
        det.fit(&train, Some(&dev)).unwrap();
        let live = det.score(&dev).unwrap();
        let bytes = det.checkpoint().unwrap().to_bytes();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(CheckpointMeta::parse(&ck).unwrap().system, system);
        let mut loaded = registry.load(&ck).unwrap();
        assert_eq!(loaded.system_id(), system);
        let reloaded = loaded.score(&dev).unwrap();
        // Parameters travel in single precision.
        for (a, b) in live.iter().zip(&reloaded) {
            assert!((a - b).abs() < 1e-3, "{system}: {a} vs {b}");
        }
        assert_eq!(registry.load(&ck).unwrap().score(&dev).unwrap(), reloaded);
        assert_eq!(loaded.checkpoint().unwrap().to_bytes(), bytes);
    }
}

/// Scores every clip by its mean absolute amplitude.
struct Loudness {
    cfg: ExperimentConfig,
    scale: Option<f64>,
}

impl Detector for Loudness {
    fn system_id(&self) -> &str {
        "loudness"
    }

    fn fit(&mut self, train: &[AudioClip], _dev: Option<&[AudioClip]>) -> replayscope::Result<FitReport> {
        let n = train.iter().filter(|c| c.label == Label::Bonafide).count().max(1);
        self.scale = Some(n as f64);
        Ok(FitReport {
            log: TrainLog::default(),
            skipped: 0,
        })
    }

    fn score(&mut self, clips: &[AudioClip]) -> replayscope::Result<Vec<f64>> {
        let scale = self.scale.ok_or_else(|| Error::Config("untrained".into()))?;
        Ok(clips
            .iter()
            .map(|c| scale * c.samples.iter().map(|v| v.abs()).sum::<f64>() / c.samples.len() as f64)
            .collect())
    }

    fn checkpoint(&self) -> replayscope::Result<Checkpoint> {
        let meta = CheckpointMeta {
            system: "loudness".into(),
            config: self.cfg.clone(),
            state: serde_json::Value::Null,
        };
        let scale = self.scale.ok_or_else(|| Error::Config("untrained".into()))?;
        Ok(Checkpoint {
            meta: meta.to_json()?,
            tensors: vec![("scale".into(), Tensor::from_fn(&[1], |_| scale))],
        })
    }

    fn restore(&mut self, ck: &Checkpoint) -> replayscope::Result<()> {
        let t = ck.get("scale").ok_or_else(|| Error::Format("no scale".into()))?;
        self.scale = Some(t.data()[0]);
        Ok(())
    }
}

fn loudness_factory(_: &str, cfg: &ExperimentConfig) -> replayscope::Result<Box<dyn Detector>> {
    Ok(Box::new(Loudness {
        cfg: cfg.clone(),
        scale: None,
    }))
}

#[test]
fn registered_detectors_run_through_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let mut registry = SystemRegistry::with_builtins();
    registry.register("loudness", loudness_factory);
    assert!(registry.contains("loudness"));
    let cfg = ExperimentConfig::desk();
    let clips = corpus(4, 5, "u");
    let ck = tmp.path().join("loud.ck");
    pipeline::train(&registry, &cfg, "loudness", &clips, None, &ck, &tmp.path().join("loud.log")).unwrap();
    let scores = pipeline::score(&registry, &ck, &clips, &tmp.path().join("loud.txt")).unwrap();
    assert_eq!(scores.entries.len(), 8);
    assert!(compute_eer(&scores).unwrap().eer <= 1.0);
    let direct = score_clips(&mut *registry.load(&pipeline::load_checkpoint(&ck).unwrap()).unwrap(), &clips).unwrap();
    assert_eq!(direct.entries, scores.entries);
    let log = fs::read_to_string(tmp.path().join("loud.log")).unwrap();
    assert!(log.contains("\"kind\":\"summary\""));
    assert!(SystemRegistry::with_builtins().load(&pipeline::load_checkpoint(&ck).unwrap()).is_err());
}

#[test]
fn corpus_roundtrips_through_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::desk();
    cfg.synth.n_utts_per_class = 3;
    assert_eq!(pipeline::synth(&cfg, tmp.path()).unwrap(), 6);
    let (clips, protocol) = synthesize_corpus(&cfg.synth).unwrap();
    let loaded = pipeline::load_corpus(tmp.path(), cfg.synth.sample_rate).unwrap();
    assert_eq!(pipeline::load_protocol(&tmp.path().join(pipeline::PROTOCOL_FILE)).unwrap(), protocol);
    assert_eq!(loaded.len(), clips.len());
    for (a, b) in loaded.iter().zip(&clips) {
        assert_eq!(a.utterance_id, b.utterance_id);
        assert_eq!(a.label, b.label);
        assert_eq!(a.speaker_quality, b.speaker_quality);
        assert_eq!(a.samples.len(), b.samples.len());
        // 16-bit PCM quantisation.
        assert!(a.samples.iter().zip(&b.samples).all(|(x, y)| (x - y).abs() <= 1.0 / 32768.0 + 1e-12));
    }
    fs::remove_file(tmp.path().join(pipeline::AUDIO_DIR).join(format!("{}.wav", clips[2].utterance_id))).unwrap();
    let err = pipeline::load_corpus(tmp.path(), cfg.synth.sample_rate).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Input);
    assert!(err.to_string().contains(&clips[2].utterance_id));
}

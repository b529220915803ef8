//! File-level stages shared by the command-line tool: corpus layout, atomic
//! writes and the synth / extract / train / score / fuse / eval steps.
//!
//! A corpus directory holds `protocol.txt` and one `wav/<utterance_id>.wav`
//! per protocol entry.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use replayscope_autodiff::Checkpoint;
use serde::Serialize;

use crate::audio::{
    format_protocol, join_protocol, parse_protocol, read_audio, synthesize_corpus, write_wav, AudioClip,
    ProtocolEntry, ReadOptions,
};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::features::{extract_spectro, write_features, FeatureConfig};
use crate::metrics::{
    breakdown_report, compute_eer, compute_min_tdcf, format_scores, fuse_scores, parse_scores, MetricsReport,
    ScoreSet, SystemSummary, format_summary,
};
use crate::systems::{score_clips, spec_channels, SystemRegistry};
use crate::training::TrainLog;

pub const PROTOCOL_FILE: &str = "protocol.txt";
pub const AUDIO_DIR: &str = "wav";

/// Write through a temporary sibling and rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Synthesize a corpus into `out`. Returns the number of clips.
pub fn synth(cfg: &ExperimentConfig, out: &Path) -> Result<usize> {
    cfg.synth.validate()?;
    let (clips, entries) = synthesize_corpus(&cfg.synth)?;
    let audio = out.join(AUDIO_DIR);
    fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    for clip in &clips {
        let path = audio.join(format!("{}.wav", clip.utterance_id));
        let tmp = audio.join(format!(".{}.wav.tmp", clip.utterance_id));
        write_wav(&tmp, clip)?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    }
    write_atomic(&out.join(PROTOCOL_FILE), format_protocol(&entries).as_bytes())?;
    Ok(clips.len())
}

/// Read a protocol file.
pub fn load_protocol(path: &Path) -> Result<Vec<ProtocolEntry>> {
    parse_protocol(&read_text(path)?)
}

/// Load every clip listed in `<dir>/protocol.txt`, labelled, in protocol order.
pub fn load_corpus(dir: &Path, sample_rate: u32) -> Result<Vec<AudioClip>> {
    let entries = load_protocol(&dir.join(PROTOCOL_FILE))?;
    let opts = ReadOptions {
        resample: false,
        target_rate: sample_rate,
    };
    let audio = dir.join(AUDIO_DIR);
    let mut clips = Vec::with_capacity(entries.len());
    let mut missing = Vec::new();
    for e in &entries {
        let wav = audio.join(format!("{}.wav", e.utterance_id));
        let flac = audio.join(format!("{}.flac", e.utterance_id));
        if wav.exists() {
            clips.push(read_audio(&wav, opts)?);
        } else if flac.exists() {
            clips.push(read_audio(&flac, opts)?);
        } else {
            missing.push(e.utterance_id.as_str());
        }
    }
    if !missing.is_empty() {
        return Err(Error::Input(format!(
            "{}: no audio for protocol entries: {}",
            audio.display(),
            missing.join(", ")
        )));
    }
    join_protocol(&entries, clips)
}

/// Write one feature container per clip for a spectrogram system.
pub fn extract(cfg: &ExperimentConfig, system: &str, clips: &[AudioClip], out: &Path) -> Result<usize> {
    let features = FeatureConfig {
        channels: spec_channels(system)?,
        ..cfg.features.clone()
    };
    features.validate(cfg.synth.sample_rate)?;
    for clip in clips {
        let t = extract_spectro(clip, &features)?;
        let mut buf = Vec::new();
        write_features(&mut buf, &t)?;
        write_atomic(&out.join(format!("{}.rsft", clip.utterance_id)), &buf)?;
    }
    Ok(clips.len())
}

/// Train-log lines: one JSON object per step, then one per epoch, then a
/// summary line.
pub fn format_train_log(log: &TrainLog, skipped: usize) -> Result<String> {
    let mut out = String::new();
    let line = |out: &mut String, v: serde_json::Value| -> Result<()> {
        out.push_str(&serde_json::to_string(&v).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
        Ok(())
    };
    for s in &log.steps {
        line(&mut out, serde_json::json!({ "kind": "step", "step": s.step, "epoch": s.epoch, "loss": s.loss, "cross_entropy": s.cross_entropy, "center_loss": s.center_loss }))?;
    }
    for e in &log.epochs {
        line(&mut out, serde_json::json!({ "kind": "epoch", "epoch": e.epoch, "mean_loss": e.mean_loss, "train_accuracy": e.train_accuracy, "dev_eer": e.dev_eer, "dev_min_tdcf": e.dev_min_tdcf }))?;
    }
    line(&mut out, serde_json::json!({ "kind": "summary", "best_epoch": log.best_epoch, "skipped_utterances": skipped }))?;
    Ok(out)
}

/// Fit `system` and write its checkpoint and training log.
pub fn train(
    registry: &SystemRegistry,
    cfg: &ExperimentConfig,
    system: &str,
    train_clips: &[AudioClip],
    dev_clips: Option<&[AudioClip]>,
    checkpoint: &Path,
    log_path: &Path,
) -> Result<TrainLog> {
    let mut det = registry.create(system, cfg)?;
    let report = det.fit(train_clips, dev_clips)?;
    write_atomic(checkpoint, &det.checkpoint()?.to_bytes())?;
    write_atomic(log_path, format_train_log(&report.log, report.skipped)?.as_bytes())?;
    Ok(report.log)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

/// Score clips with a saved system and write `utterance_id score` lines.
pub fn score(registry: &SystemRegistry, checkpoint: &Path, clips: &[AudioClip], out: &Path) -> Result<ScoreSet> {
    let mut det = registry.load(&load_checkpoint(checkpoint)?)?;
    let set = score_clips(det.as_mut(), clips)?;
    write_atomic(out, format_scores(&set).as_bytes())?;
    Ok(set)
}

/// System id of a score file: its stem.
pub fn score_file_id(path: &Path) -> String {
    path.file_stem().map_or_else(|| "scores".to_string(), |s| s.to_string_lossy().into_owned())
}

/// Read a score file and attach protocol labels.
pub fn load_scores(path: &Path, protocol: &[ProtocolEntry]) -> Result<ScoreSet> {
    let scores = parse_scores(&read_text(path)?).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })?;
    ScoreSet::from_scores(&score_file_id(path), &scores, protocol)
}

/// Read a score file without labels, keyed by utterance id.
pub fn load_unlabelled_scores(path: &Path) -> Result<ScoreSet> {
    let scores = parse_scores(&read_text(path)?)?;
    let entries = scores
        .into_iter()
        .map(|(id, score)| crate::metrics::ScoreEntry {
            utterance_id: id,
            score,
            label: crate::audio::Label::Unknown,
            attacker_distance: None,
            speaker_quality: None,
        })
        .collect();
    ScoreSet::new(score_file_id(path), entries)
}

/// Sum score files utterance by utterance and write the result.
pub fn fuse(inputs: &[PathBuf], z_norm: bool, out: &Path) -> Result<ScoreSet> {
    let sets = inputs.iter().map(|p| load_unlabelled_scores(p)).collect::<Result<Vec<_>>>()?;
    let fused = fuse_scores(&sets, z_norm)?;
    write_atomic(out, format_scores(&fused).as_bytes())?;
    Ok(fused)
}

/// Reports for one or more score files against a protocol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub reports: Vec<MetricsReport>,
    pub summary: Vec<SystemSummary>,
}

impl Evaluation {
    /// Per-system grids, then a comparison table when there are several.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, r) in self.reports.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&r.to_table());
        }
        if self.summary.len() > 1 {
            out.push('\n');
            out.push_str(&format_summary(&self.summary));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }
}

pub fn evaluate(cfg: &ExperimentConfig, score_files: &[PathBuf], protocol: &Path) -> Result<Evaluation> {
    cfg.tdcf.validate()?;
    let protocol = load_protocol(protocol)?;
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    for path in score_files {
        let set = load_scores(path, &protocol)?;
        summary.push(SystemSummary {
            system_id: set.system_id.clone(),
            eer: compute_eer(&set)?.eer,
            min_tdcf: compute_min_tdcf(&set, &cfg.tdcf)?,
        });
        reports.push(breakdown_report(&set, &cfg.tdcf)?);
    }
    Ok(Evaluation { reports, summary })
}

/// Write `<stem>.det.txt` DET operating points for each score file.
pub fn write_det_curves(score_files: &[PathBuf], protocol: &Path, dir: &Path) -> Result<()> {
    let protocol = load_protocol(protocol)?;
    for path in score_files {
        let set = load_scores(path, &protocol)?;
        let points = crate::metrics::det_points(&set)?;
        let out = dir.join(format!("{}.det.txt", score_file_id(path)));
        write_atomic(&out, crate::metrics::format_det(&points).as_bytes())?;
    }
    Ok(())
}

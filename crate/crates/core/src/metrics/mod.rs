//! Detection scores, EER and minimum normalised t-DCF, score-level fusion and
//! the per-replay-configuration breakdown.

mod detection;
mod report;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::audio::{Grade, Label, ProtocolEntry};
use crate::error::{Error, Result};

pub use detection::{compute_eer, compute_min_tdcf, det_points, format_det, DetPoint, Eer, TdcfParams};
pub use report::{breakdown_report, format_summary, CellMetrics, MetricsReport, SystemSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub utterance_id: String,
    pub score: f64,
    pub label: Label,
    pub attacker_distance: Option<Grade>,
    pub speaker_quality: Option<Grade>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub system_id: String,
    pub entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn new(system_id: impl Into<String>, entries: Vec<ScoreEntry>) -> Result<Self> {
        let set = Self {
            system_id: system_id.into(),
            entries,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.utterance_id.as_str()) {
                return Err(Error::Input(format!(
                    "{}: utterance {} scored twice",
                    self.system_id, e.utterance_id
                )));
            }
            if !e.score.is_finite() {
                return Err(Error::Numeric(format!(
                    "{}: score of {} is {}",
                    self.system_id, e.utterance_id, e.score
                )));
            }
        }
        Ok(())
    }

    /// Attach protocol labels to bare `(id, score)` pairs.
    pub fn from_scores(system_id: &str, scores: &[(String, f64)], protocol: &[ProtocolEntry]) -> Result<Self> {
        let by_id: HashMap<&str, &ProtocolEntry> =
            protocol.iter().map(|e| (e.utterance_id.as_str(), e)).collect();
        let mut missing = Vec::new();
        let mut entries = Vec::with_capacity(scores.len());
        for (id, score) in scores {
            match by_id.get(id.as_str()) {
                Some(p) => entries.push(ScoreEntry {
                    utterance_id: id.clone(),
                    score: *score,
                    label: p.label,
                    attacker_distance: p.attacker_distance,
                    speaker_quality: p.speaker_quality,
                }),
                None => missing.push(id.as_str()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Input(format!(
                "scored utterances absent from the protocol: {}",
                missing.join(", ")
            )));
        }
        Self::new(system_id, entries)
    }

    pub fn bonafide_scores(&self) -> Vec<f64> {
        self.scores_with(Label::Bonafide)
    }

    pub fn spoof_scores(&self) -> Vec<f64> {
        self.scores_with(Label::Spoof)
    }

    fn scores_with(&self, label: Label) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.label == label)
            .map(|e| e.score)
            .collect()
    }
}

/// Parse a score file: one `utterance_id score` pair per non-empty line.
pub fn parse_scores(text: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [id, score] => {
                let v: f64 = score.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad score {score:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        msg: format!("non-finite score {score}"),
                    });
                }
                if !seen.insert(id.to_string()) {
                    return Err(Error::Parse {
                        line,
                        msg: format!("duplicate utterance id {id:?}"),
                    });
                }
                out.push((id.to_string(), v));
            }
            _ => {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected `utterance_id score`, found {} fields", fields.len()),
                })
            }
        }
    }
    Ok(out)
}

/// Score file text; full round-trip precision via shortest float formatting.
pub fn format_scores(set: &ScoreSet) -> String {
    set.entries
        .iter()
        .map(|e| format!("{} {}\n", e.utterance_id, e.score))
        .collect()
}

/// Per-utterance sum of member scores. With `z_norm` each member is first
/// standardised by its own mean and standard deviation.
pub fn fuse_scores(sets: &[ScoreSet], z_norm: bool) -> Result<ScoreSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Input("nothing to fuse".into()))?;
    let ids: BTreeSet<&str> = first.entries.iter().map(|e| e.utterance_id.as_str()).collect();
    let mut lookups = Vec::with_capacity(sets.len());
    for s in sets {
        let other: BTreeSet<&str> = s.entries.iter().map(|e| e.utterance_id.as_str()).collect();
        if other != ids {
            let diff: Vec<&str> = ids.symmetric_difference(&other).copied().collect();
            return Err(Error::Input(format!(
                "{} and {} score different utterances: {}",
                first.system_id,
                s.system_id,
                diff.join(", ")
            )));
        }
        let (mean, sd) = if z_norm {
            let n = s.entries.len() as f64;
            let mean = s.entries.iter().map(|e| e.score).sum::<f64>() / n;
            let var = s.entries.iter().map(|e| (e.score - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt().max(1e-12))
        } else {
            (0.0, 1.0)
        };
        let map: HashMap<&str, f64> = s
            .entries
            .iter()
            .map(|e| (e.utterance_id.as_str(), (e.score - mean) / sd))
            .collect();
        lookups.push(map);
    }
    let entries = first
        .entries
        .iter()
        .map(|e| ScoreEntry {
            score: lookups.iter().map(|m| m[e.utterance_id.as_str()]).sum(),
            ..e.clone()
        })
        .collect();
    let system_id = sets.iter().map(|s| s.system_id.as_str()).collect::<Vec<_>>().join("+");
    ScoreSet::new(system_id, entries)
}

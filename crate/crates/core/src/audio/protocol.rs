//! Whitespace-separated protocol files, one utterance per line:
//!
//! ```text
//! <utterance_id> <label> [<config> [<env_id>]]
//! ```
//!
//! `label` is `bonafide` or a spoof token (`spoof`, `spoofed`, `replay`).
//! `config` is a two-letter replay tag (attacker-to-talker distance then
//! loudspeaker quality, each `A`/`B`/`C`) or `-`. `env_id` is free text, `-`
//! for none.

use std::collections::{HashMap, HashSet};

use super::{config_code, AudioClip, Grade, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolEntry {
    pub utterance_id: String,
    pub label: Label,
    pub attacker_distance: Option<Grade>,
    pub speaker_quality: Option<Grade>,
    pub env_id: String,
}

const SPOOF_TOKENS: [&str; 3] = ["spoof", "spoofed", "replay"];

fn parse_config(token: &str, line: usize) -> Result<(Option<Grade>, Option<Grade>)> {
    if token == "-" || token == "--" {
        return Ok((None, None));
    }
    let chars: Vec<char> = token.chars().collect();
    let grade = |c: char| -> Result<Option<Grade>> {
        if c == '-' {
            return Ok(None);
        }
        Grade::from_char(c).map(Some).ok_or_else(|| Error::Parse {
            line,
            msg: format!("bad replay configuration {token:?}"),
        })
    };
    match chars.as_slice() {
        [d, q] => Ok((grade(*d)?, grade(*q)?)),
        _ => Err(Error::Parse {
            line,
            msg: format!("bad replay configuration {token:?}"),
        }),
    }
}

pub fn parse_protocol(text: &str) -> Result<Vec<ProtocolEntry>> {
    let mut entries = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 2 || fields.len() > 4 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 2-4 fields, found {}", fields.len()),
            });
        }
        let id = fields[0].to_string();
        if let Some(first) = seen.insert(id.clone(), line) {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate utterance id {id:?} (first on line {first})"),
            });
        }
        let label = match fields[1] {
            "bonafide" | "bona-fide" | "genuine" => Label::Bonafide,
            t if SPOOF_TOKENS.contains(&t) => Label::Spoof,
            t => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown label token {t:?}"),
                })
            }
        };
        let (attacker_distance, speaker_quality) = match fields.get(2) {
            Some(t) => parse_config(t, line)?,
            None => (None, None),
        };
        if label == Label::Bonafide && (attacker_distance.is_some() || speaker_quality.is_some()) {
            return Err(Error::Parse {
                line,
                msg: "bona-fide entry carries a replay configuration".into(),
            });
        }
        let env_id = match fields.get(3) {
            Some(&"-") | None => String::new(),
            Some(t) => t.to_string(),
        };
        entries.push(ProtocolEntry {
            utterance_id: id,
            label,
            attacker_distance,
            speaker_quality,
            env_id,
        });
    }
    Ok(entries)
}

pub fn format_protocol(entries: &[ProtocolEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let env = if e.env_id.is_empty() { "-" } else { &e.env_id };
        out.push_str(&format!(
            "{} {} {} {}\n",
            e.utterance_id,
            e.label,
            config_code(e.attacker_distance, e.speaker_quality),
            env
        ));
    }
    out
}

impl ProtocolEntry {
    pub fn of_clip(clip: &AudioClip) -> Self {
        Self {
            utterance_id: clip.utterance_id.clone(),
            label: clip.label,
            attacker_distance: clip.attacker_distance,
            speaker_quality: clip.speaker_quality,
            env_id: clip.env_id.clone(),
        }
    }
}

/// Attach protocol labels to clips, in protocol order. Every entry must match
/// exactly one clip; missing ids are reported together.
pub fn join_protocol(entries: &[ProtocolEntry], clips: Vec<AudioClip>) -> Result<Vec<AudioClip>> {
    let mut by_id: HashMap<String, AudioClip> = HashMap::with_capacity(clips.len());
    for clip in clips {
        let id = clip.utterance_id.clone();
        if by_id.insert(id.clone(), clip).is_some() {
            return Err(Error::Input(format!("two clips share utterance id {id:?}")));
        }
    }
    let missing: Vec<&str> = entries
        .iter()
        .filter(|e| !by_id.contains_key(&e.utterance_id))
        .map(|e| e.utterance_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Input(format!(
            "no audio for protocol entries: {}",
            missing.join(", ")
        )));
    }
    let mut used = HashSet::new();
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        used.insert(e.utterance_id.clone());
        let mut clip = by_id.remove(&e.utterance_id).expect("checked above");
        clip.label = e.label;
        clip.attacker_distance = e.attacker_distance;
        clip.speaker_quality = e.speaker_quality;
        clip.env_id = e.env_id.clone();
        out.push(clip);
    }
    Ok(out)
}

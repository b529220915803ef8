//! Labeled utterances, audio file I/O, protocol files and the synthetic
//! replay corpus.

mod io;
mod protocol;
mod synth;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_audio, write_wav, ReadOptions};
pub use protocol::{format_protocol, join_protocol, parse_protocol, ProtocolEntry};
pub use synth::{band_energy_above, synthesize_corpus, SynthConfig};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide,
    Spoof,
    Unknown,
}

impl Label {
    /// Class index used by the two-node output layer (bona fide first).
    pub fn class_index(self) -> Option<usize> {
        match self {
            Label::Bonafide => Some(0),
            Label::Spoof => Some(1),
            Label::Unknown => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
            Label::Unknown => "unknown",
        })
    }
}

/// Three-level replay-condition grade. For attacker-to-talker distance A is
/// closest (10-50 cm); for loudspeaker quality A is best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grade {
    A,
    B,
    C,
}

impl Grade {
    pub const ALL: [Grade; 3] = [Grade::A, Grade::B, Grade::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'A' => Some(Grade::A),
            'B' => Some(Grade::B),
            'C' => Some(Grade::C),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        ['A', 'B', 'C'][self.index()]
    }
}

/// Replay configuration tag, `None` for bona-fide speech.
pub fn config_code(distance: Option<Grade>, quality: Option<Grade>) -> String {
    match (distance, quality) {
        (None, None) => "-".into(),
        (d, q) => format!(
            "{}{}",
            d.map_or('-', Grade::as_char),
            q.map_or('-', Grade::as_char)
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub utterance_id: String,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: Label,
    pub attacker_distance: Option<Grade>,
    pub speaker_quality: Option<Grade>,
    pub env_id: String,
}

impl AudioClip {
    /// Unlabeled clip; fails if the invariants on rate and samples do not hold.
    pub fn new(utterance_id: impl Into<String>, samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let clip = Self {
            utterance_id: utterance_id.into(),
            samples,
            sample_rate,
            label: Label::Unknown,
            attacker_distance: None,
            speaker_quality: None,
            env_id: String::new(),
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Input(format!("{}: sample rate is zero", self.utterance_id)));
        }
        if self.samples.is_empty() {
            return Err(Error::Input(format!("{}: no samples", self.utterance_id)));
        }
        if let Some(s) = self.samples.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
            return Err(Error::Input(format!(
                "{}: sample {s} outside [-1, 1]",
                self.utterance_id
            )));
        }
        if (self.attacker_distance.is_some() || self.speaker_quality.is_some())
            && self.label != Label::Spoof
        {
            return Err(Error::Input(format!(
                "{}: replay configuration on a non-spoof clip",
                self.utterance_id
            )));
        }
        Ok(())
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn config_code(&self) -> String {
        config_code(self.attacker_distance, self.speaker_quality)
    }
}

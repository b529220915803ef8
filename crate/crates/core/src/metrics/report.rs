use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::detection::{compute_eer, compute_min_tdcf, TdcfParams};
use super::{ScoreEntry, ScoreSet};
use crate::audio::{Grade, Label};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub eer: f64,
    pub threshold: f64,
    pub min_tdcf: f64,
    pub n_bonafide: usize,
    pub n_spoof: usize,
}

fn cell(set: &ScoreSet, params: &TdcfParams) -> Result<CellMetrics> {
    let eer = compute_eer(set)?;
    Ok(CellMetrics {
        eer: eer.eer,
        threshold: eer.threshold,
        min_tdcf: compute_min_tdcf(set, params)?,
        n_bonafide: set.entries.iter().filter(|e| e.label == Label::Bonafide).count(),
        n_spoof: set.entries.iter().filter(|e| e.label == Label::Spoof).count(),
    })
}

/// Pooled metrics plus one cell per (distance, quality) replay configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub system_id: String,
    pub pooled: CellMetrics,
    /// `(label, metrics)` for AA, AB, ..., CC; `None` when no spoof carries that tag.
    pub cells: Vec<(String, Option<CellMetrics>)>,
    /// Spoofed entries without a complete configuration tag (pooled only).
    pub untagged_spoof: usize,
}

impl MetricsReport {
    pub fn cell(&self, distance: Grade, quality: Grade) -> Option<&CellMetrics> {
        self.cells[distance.index() * 3 + quality.index()].1.as_ref()
    }

    /// Columns Pooled, AA..CC; rows EER (%) and min t-DCF.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "system: {}", self.system_id);
        let _ = write!(out, "{:<12}{:>9}", "", "Pooled");
        for (label, _) in &self.cells {
            let _ = write!(out, "{label:>9}");
        }
        out.push('\n');
        let row = |out: &mut String, name: &str, f: &dyn Fn(&CellMetrics) -> String| {
            let _ = write!(out, "{name:<12}{:>9}", f(&self.pooled));
            for (_, c) in &self.cells {
                let _ = write!(out, "{:>9}", c.as_ref().map_or("-".to_string(), f));
            }
            out.push('\n');
        };
        row(&mut out, "EER (%)", &|c| format!("{:.2}", 100.0 * c.eer));
        row(&mut out, "min t-DCF", &|c| format!("{:.4}", c.min_tdcf));
        row(&mut out, "# spoof", &|c| c.n_spoof.to_string());
        let _ = writeln!(out, "# bona fide: {}", self.pooled.n_bonafide);
        out
    }
}

pub fn breakdown_report(set: &ScoreSet, params: &TdcfParams) -> Result<MetricsReport> {
    params.validate()?;
    let pooled = cell(set, params)?;
    let bona: Vec<&ScoreEntry> = set.entries.iter().filter(|e| e.label == Label::Bonafide).collect();
    let mut cells = Vec::with_capacity(9);
    let mut tagged = 0;
    for d in Grade::ALL {
        for q in Grade::ALL {
            let spoofs: Vec<&ScoreEntry> = set
                .entries
                .iter()
                .filter(|e| e.label == Label::Spoof && e.attacker_distance == Some(d) && e.speaker_quality == Some(q))
                .collect();
            tagged += spoofs.len();
            let label = format!("{}{}", d.as_char(), q.as_char());
            let metrics = if spoofs.is_empty() {
                None
            } else {
                let subset = ScoreSet {
                    system_id: format!("{}[{label}]", set.system_id),
                    entries: bona.iter().chain(&spoofs).map(|e| (*e).clone()).collect(),
                };
                Some(cell(&subset, params)?)
            };
            cells.push((label, metrics));
        }
    }
    Ok(MetricsReport {
        system_id: set.system_id.clone(),
        untagged_spoof: pooled.n_spoof - tagged,
        pooled,
        cells,
    })
}

/// One row of a multi-system comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub system_id: String,
    pub eer: f64,
    pub min_tdcf: f64,
}

pub fn format_summary(rows: &[SystemSummary]) -> String {
    let width = rows.iter().map(|r| r.system_id.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<width$}  {:>9}  {:>9}\n", "System", "EER (%)", "t-DCF");
    for r in rows {
        let _ = writeln!(out, "{:<width$}  {:>9.2}  {:>9.4}", r.system_id, 100.0 * r.eer, r.min_tdcf);
    }
    out
}

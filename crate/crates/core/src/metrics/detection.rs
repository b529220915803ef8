use serde::{Deserialize, Serialize};

use super::ScoreSet;
use crate::error::{Error, Result};

/// Equal error rate and the interpolated threshold where FAR and FRR cross.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

/// One operating point of the detection-error trade-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    /// Decision threshold; `f64::INFINITY` rejects everything.
    pub threshold: f64,
    /// Bona-fide utterances scored below the threshold.
    pub frr: f64,
    /// Spoofed utterances scored at or above the threshold.
    pub far: f64,
}

fn split(set: &ScoreSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut bona = set.bonafide_scores();
    let mut spoof = set.spoof_scores();
    if bona.is_empty() || spoof.is_empty() {
        return Err(Error::Input(format!(
            "{}: need both classes, have {} bona fide and {} spoofed",
            set.system_id,
            bona.len(),
            spoof.len()
        )));
    }
    if bona.iter().chain(&spoof).any(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("{}: non-finite score", set.system_id)));
    }
    bona.sort_by(f64::total_cmp);
    spoof.sort_by(f64::total_cmp);
    Ok((bona, spoof))
}

/// Operating points at every distinct score plus `+inf`, ascending threshold.
fn sweep(bona: &[f64], spoof: &[f64]) -> Vec<DetPoint> {
    let mut thresholds: Vec<f64> = bona.iter().chain(spoof).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let (nb, ns) = (bona.len() as f64, spoof.len() as f64);
    let (mut ib, mut is) = (0usize, 0usize);
    thresholds
        .into_iter()
        .map(|th| {
            while ib < bona.len() && bona[ib] < th {
                ib += 1;
            }
            while is < spoof.len() && spoof[is] < th {
                is += 1;
            }
            DetPoint {
                threshold: th,
                frr: ib as f64 / nb,
                far: (spoof.len() - is) as f64 / ns,
            }
        })
        .collect()
}

pub fn det_points(set: &ScoreSet) -> Result<Vec<DetPoint>> {
    let (bona, spoof) = split(set)?;
    Ok(sweep(&bona, &spoof))
}

/// Text export, one `threshold frr far` line per operating point.
pub fn format_det(points: &[DetPoint]) -> String {
    points
        .iter()
        .map(|p| format!("{} {} {}\n", p.threshold, p.frr, p.far))
        .collect()
}

/// EER by linear interpolation between the last operating point with
/// FRR < FAR and the first with FRR >= FAR. The threshold is interpolated
/// the same way, with `+inf` standing in as the largest score.
pub fn compute_eer(set: &ScoreSet) -> Result<Eer> {
    let (bona, spoof) = split(set)?;
    let points = sweep(&bona, &spoof);
    let max_score = bona[bona.len() - 1].max(spoof[spoof.len() - 1]);
    // points[0] has FRR 0 and FAR 1, so the crossing index is at least 1.
    let i = points
        .iter()
        .position(|p| p.frr >= p.far)
        .expect("the +inf operating point has FRR 1 and FAR 0");
    let (a, b) = (points[i - 1], points[i]);
    let (da, db) = (a.frr - a.far, b.frr - b.far);
    let t = -da / (db - da);
    let th = |p: DetPoint| if p.threshold.is_finite() { p.threshold } else { max_score };
    Ok(Eer {
        eer: a.frr + t * (b.frr - a.frr),
        threshold: th(a) + t * (th(b) - th(a)),
    })
}

/// Tandem cost model: countermeasure priors and costs plus a fixed ASV
/// operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TdcfParams {
    pub pi_tar: f64,
    pub pi_non: f64,
    pub pi_spoof: f64,
    pub c_miss: f64,
    pub c_fa: f64,
    pub p_miss_asv: f64,
    pub p_fa_asv: f64,
    pub p_miss_spoof_asv: f64,
}

impl Default for TdcfParams {
    fn default() -> Self {
        Self {
            pi_tar: 0.9405,
            pi_non: 0.0095,
            pi_spoof: 0.05,
            c_miss: 1.0,
            c_fa: 10.0,
            p_miss_asv: 0.05,
            p_fa_asv: 0.05,
            p_miss_spoof_asv: 0.30,
        }
    }
}

impl TdcfParams {
    pub fn validate(&self) -> Result<()> {
        let priors = [self.pi_tar, self.pi_non, self.pi_spoof];
        if priors.iter().any(|p| !(*p >= 0.0)) || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("t-DCF priors {priors:?} must be non-negative and sum to 1")));
        }
        if !(self.c_miss > 0.0 && self.c_fa > 0.0) {
            return Err(Error::Config("t-DCF costs must be positive".into()));
        }
        for p in [self.p_miss_asv, self.p_fa_asv, self.p_miss_spoof_asv] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("ASV error rate {p} outside [0, 1]")));
            }
        }
        let (c1, c2) = self.weights();
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(Error::Config(format!(
                "t-DCF weights C1 = {c1}, C2 = {c2} give a non-positive normaliser"
            )));
        }
        Ok(())
    }

    /// `(C1, C2)`, the weights of the countermeasure miss and false-alarm rates.
    pub fn weights(&self) -> (f64, f64) {
        let c1 = self.pi_tar * (self.c_miss - self.c_miss * self.p_miss_asv) - self.pi_non * self.c_fa * self.p_fa_asv;
        let c2 = self.c_fa * self.pi_spoof * (1.0 - self.p_miss_spoof_asv);
        (c1, c2)
    }
}

/// Minimum over thresholds of `(C1 * P_miss + C2 * P_fa) / min(C1, C2)`.
pub fn compute_min_tdcf(set: &ScoreSet, params: &TdcfParams) -> Result<f64> {
    params.validate()?;
    let (bona, spoof) = split(set)?;
    let (c1, c2) = params.weights();
    let norm = c1.min(c2);
    Ok(sweep(&bona, &spoof)
        .iter()
        .map(|p| (c1 * p.frr + c2 * p.far) / norm)
        .fold(f64::INFINITY, f64::min))
}

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gmm::{BwStats, GmmModel};
use crate::error::{Error, Result};

const RIDGE: f64 = 1e-6;

/// Total-variability matrix, `(C*D) x R`, component blocks of `D` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TvMatrix {
    pub t: DMatrix<f64>,
    components: usize,
    dim: usize,
}

impl TvMatrix {
    pub fn new(t: DMatrix<f64>, ubm: &GmmModel) -> Result<Self> {
        let (c, d) = (ubm.n_components(), ubm.dim());
        if t.nrows() != c * d || t.ncols() == 0 {
            return Err(Error::Input(format!(
                "T of shape {:?} does not match a {c}x{d} UBM",
                t.shape()
            )));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("T has non-finite entries".into()));
        }
        Ok(Self { t, components: c, dim: d })
    }

    pub fn rank(&self) -> usize {
        self.t.ncols()
    }

    fn block(&self, c: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.t.rows(c * self.dim, self.dim)
    }

    /// `T_c' Sigma_c^-1 T_c` for every component.
    fn precisions(&self, ubm: &GmmModel) -> Vec<DMatrix<f64>> {
        (0..self.components)
            .map(|c| {
                let tc = self.block(c);
                let mut scaled = tc.clone_owned();
                for k in 0..self.dim {
                    let inv = 1.0 / ubm.variances[(c, k)];
                    scaled.row_mut(k).scale_mut(inv);
                }
                tc.transpose() * scaled
            })
            .collect()
    }
}

/// Posterior of `w` for one utterance: precision `L`, linear term `b`.
struct Posterior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    objective: f64,
}

fn solve_spd(l: DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let chol = match Cholesky::new(l.clone()) {
        Some(ch) => ch,
        None => {
            log::warn!("singular utterance precision; adding ridge {RIDGE}");
            let r = l.nrows();
            Cholesky::new(l + DMatrix::identity(r, r) * RIDGE)
                .ok_or_else(|| Error::Numeric("posterior precision is not positive definite".into()))?
        }
    };
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok((chol.solve(b), chol.inverse(), logdet))
}

fn posterior(stats: &BwStats, tv: &TvMatrix, ubm: &GmmModel, prec: &[DMatrix<f64>]) -> Result<Posterior> {
    let r = tv.rank();
    let mut l = DMatrix::identity(r, r);
    let mut b = DVector::zeros(r);
    for c in 0..tv.components {
        let nc = stats.n[c];
        if nc != 0.0 {
            l += &prec[c] * nc;
        }
        let tc = tv.block(c);
        for k in 0..tv.dim {
            let f = stats.f[(c, k)];
            if f != 0.0 {
                b.axpy(f / ubm.variances[(c, k)], &tc.row(k).transpose(), 1.0);
            }
        }
    }
    let (mean, cov, logdet) = solve_spd(l, &b)?;
    let objective = 0.5 * b.dot(&mean) - 0.5 * logdet;
    Ok(Posterior { mean, cov, objective })
}

/// Posterior mean `w = (I + T' S^-1 N T)^-1 T' S^-1 F~`. No length
/// normalisation or LDA is applied.
pub fn extract_ivector(stats: &BwStats, tv: &TvMatrix, ubm: &GmmModel) -> Result<DVector<f64>> {
    if stats.n.len() != tv.components || stats.f.ncols() != tv.dim {
        return Err(Error::Input("statistics do not match the UBM".into()));
    }
    if stats.n.iter().all(|v| *v == 0.0) {
        return Ok(DVector::zeros(tv.rank()));
    }
    let prec = tv.precisions(ubm);
    Ok(posterior(stats, tv, ubm, &prec)?.mean)
}

/// Extract many i-vectors sharing one precomputation.
pub fn extract_ivectors(stats: &[BwStats], tv: &TvMatrix, ubm: &GmmModel) -> Result<Vec<DVector<f64>>> {
    let prec = tv.precisions(ubm);
    stats
        .iter()
        .map(|s| {
            if s.n.len() != tv.components || s.f.ncols() != tv.dim {
                return Err(Error::Input("statistics do not match the UBM".into()));
            }
            Ok(posterior(s, tv, ubm, &prec)?.mean)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvConfig {
    pub rank: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self {
            rank: 200,
            iterations: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvReport {
    /// Marginal log-likelihood of the statistics (up to a T-independent
    /// constant) before each iteration and after the last.
    pub objective: Vec<f64>,
    pub ridge_applied: usize,
}

/// EM for `M = m + T w`, `w ~ N(0, I)`, with UBM covariances held fixed.
pub fn train_tv(stats: &[BwStats], ubm: &GmmModel, cfg: &TvConfig) -> Result<(TvMatrix, TvReport)> {
    let (c, d, r) = (ubm.n_components(), ubm.dim(), cfg.rank);
    if r == 0 {
        return Err(Error::Config("total-variability rank must be positive".into()));
    }
    if stats.is_empty() {
        return Err(Error::Input("no utterance statistics".into()));
    }
    if stats.iter().any(|s| s.n.len() != c || s.f.ncols() != d) {
        return Err(Error::Input("statistics do not match the UBM".into()));
    }
    if stats.len() < r {
        log::warn!("{} utterances for a rank-{r} subspace", stats.len());
    }
    // Random start scaled to the UBM spread.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut t = DMatrix::zeros(c * d, r);
    for ci in 0..c {
        for k in 0..d {
            let sd = ubm.variances[(ci, k)].sqrt();
            for j in 0..r {
                let g: f64 = StandardNormal.sample(&mut rng);
                t[(ci * d + k, j)] = 0.1 * sd * g;
            }
        }
    }
    let mut tv = TvMatrix::new(t, ubm)?;
    let mut report = TvReport {
        objective: Vec::with_capacity(cfg.iterations + 1),
        ridge_applied: 0,
    };
    for _ in 0..cfg.iterations {
        let prec = tv.precisions(ubm);
        let mut a: Vec<DMatrix<f64>> = vec![DMatrix::zeros(r, r); c];
        let mut cacc = DMatrix::<f64>::zeros(c * d, r);
        let mut objective = 0.0;
        for s in stats {
            let post = posterior(s, &tv, ubm, &prec)?;
            objective += post.objective;
            let second = &post.cov + &post.mean * post.mean.transpose();
            for ci in 0..c {
                let nc = s.n[ci];
                if nc != 0.0 {
                    a[ci] += &second * nc;
                }
                for k in 0..d {
                    let f = s.f[(ci, k)];
                    if f != 0.0 {
                        for j in 0..r {
                            cacc[(ci * d + k, j)] += f * post.mean[j];
                        }
                    }
                }
            }
        }
        report.objective.push(objective);
        let mut t = DMatrix::zeros(c * d, r);
        for ci in 0..c {
            let mut ac = a[ci].clone();
            let chol = match Cholesky::new(ac.clone()) {
                Some(ch) => ch,
                None => {
                    log::warn!("singular normal equations for component {ci}; adding ridge {RIDGE}");
                    report.ridge_applied += 1;
                    ac += DMatrix::identity(r, r) * RIDGE;
                    Cholesky::new(ac)
                        .ok_or_else(|| Error::Numeric(format!("component {ci} normal equations singular")))?
                }
            };
            // T_c = C_c A_c^-1, solved row-wise through A_c (symmetric).
            let block = cacc.rows(ci * d, d).transpose();
            let solved = chol.solve(&block);
            t.rows_mut(ci * d, d).copy_from(&solved.transpose());
        }
        tv = TvMatrix::new(t, ubm)?;
    }
    let prec = tv.precisions(ubm);
    let mut last = 0.0;
    for s in stats {
        last += posterior(s, &tv, ubm, &prec)?.objective;
    }
    report.objective.push(last);
    Ok((tv, report))
}

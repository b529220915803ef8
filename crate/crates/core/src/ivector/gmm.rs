use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal-covariance Gaussian mixture. Rows of `means`/`variances` are components.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: DVector<f64>,
    pub means: DMatrix<f64>,
    pub variances: DMatrix<f64>,
}

impl GmmModel {
    pub fn new(weights: DVector<f64>, means: DMatrix<f64>, variances: DMatrix<f64>) -> Result<Self> {
        Self::with_simplex_tolerance(weights, means, variances, 1e-10)
    }

    /// As `new`, accepting weights whose sum is within `tol` of one.
    pub fn with_simplex_tolerance(
        weights: DVector<f64>,
        means: DMatrix<f64>,
        variances: DMatrix<f64>,
        tol: f64,
    ) -> Result<Self> {
        let c = weights.len();
        if c == 0 || means.nrows() != c || variances.shape() != means.shape() {
            return Err(Error::Input(format!(
                "GMM with {c} weights, means {:?}, variances {:?}",
                means.shape(),
                variances.shape()
            )));
        }
        if (weights.sum() - 1.0).abs() > tol || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Input("GMM weights do not form a simplex".into()));
        }
        if variances.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Input("GMM variances must be positive".into()));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Per-component constant `log w_c - 0.5 * sum(log 2 pi var)`.
    fn log_consts(&self) -> Vec<f64> {
        (0..self.n_components())
            .map(|c| {
                let logdet: f64 = self.variances.row(c).iter().map(|v| v.ln()).sum();
                self.weights[c].max(1e-300).ln() - 0.5 * (logdet + self.dim() as f64 * LOG_2PI)
            })
            .collect()
    }

    /// Posterior responsibilities of one frame written into `post`; returns
    /// the frame log-likelihood.
    fn posteriors(&self, x: &[f64], consts: &[f64], inv_var: &DMatrix<f64>, post: &mut [f64]) -> f64 {
        let d = self.dim();
        for (c, p) in post.iter_mut().enumerate() {
            let mut q = 0.0;
            for k in 0..d {
                let diff = x[k] - self.means[(c, k)];
                q += diff * diff * inv_var[(c, k)];
            }
            *p = consts[c] - 0.5 * q;
        }
        let max = post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for p in post.iter_mut() {
            *p = (*p - max).exp();
            s += *p;
        }
        post.iter_mut().for_each(|p| *p /= s);
        max + s.ln()
    }

    /// Total log-likelihood of the rows of `frames`.
    pub fn log_likelihood(&self, frames: &DMatrix<f64>) -> f64 {
        let consts = self.log_consts();
        let inv = self.variances.map(|v| 1.0 / v);
        let mut post = vec![0.0; self.n_components()];
        let mut row = vec![0.0; self.dim()];
        (0..frames.nrows())
            .map(|t| {
                row.iter_mut().enumerate().for_each(|(k, v)| *v = frames[(t, k)]);
                self.posteriors(&row, &consts, &inv, &mut post)
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UbmConfig {
    pub components: usize,
    pub em_iterations: usize,
    pub kmeans_iterations: usize,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for UbmConfig {
    fn default() -> Self {
        Self {
            components: 256,
            em_iterations: 10,
            kmeans_iterations: 5,
            variance_floor: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UbmReport {
    /// Data log-likelihood before each EM iteration and after the last one.
    pub log_likelihood: Vec<f64>,
    /// Components re-seeded after coming out of an E-step empty.
    pub reseeded: usize,
}

/// Squared-distance k-means++ seeding followed by a few Lloyd iterations.
fn kmeans_init(frames: &DMatrix<f64>, c: usize, iters: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<usize>) {
    let (n, d) = frames.shape();
    let dist2 = |t: usize, m: &DMatrix<f64>, j: usize| -> f64 {
        (0..d).map(|k| (frames[(t, k)] - m[(j, k)]).powi(2)).sum()
    };
    let mut centers = DMatrix::zeros(c, d);
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from(&frames.row(first));
    let mut best: Vec<f64> = (0..n).map(|t| dist2(t, &centers, 0)).collect();
    for j in 1..c {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen_range(0.0..total);
            let mut idx = n - 1;
            for (t, b) in best.iter().enumerate() {
                if r < *b {
                    idx = t;
                    break;
                }
                r -= b;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centers.row_mut(j).copy_from(&frames.row(pick));
        for (t, b) in best.iter_mut().enumerate() {
            *b = b.min(dist2(t, &centers, j));
        }
    }
    let mut assign = vec![0usize; n];
    for _ in 0..=iters {
        for (t, a) in assign.iter_mut().enumerate() {
            *a = (0..c)
                .min_by(|&i, &j| dist2(t, &centers, i).total_cmp(&dist2(t, &centers, j)))
                .unwrap_or(0);
        }
        let mut sums = DMatrix::<f64>::zeros(c, d);
        let mut counts = vec![0usize; c];
        for (t, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for k in 0..d {
                sums[(a, k)] += frames[(t, k)];
            }
        }
        for j in 0..c {
            if counts[j] > 0 {
                for k in 0..d {
                    centers[(j, k)] = sums[(j, k)] / counts[j] as f64;
                }
            }
        }
    }
    (centers, assign)
}

/// Train a diagonal GMM on pooled frames (rows of `frames`).
pub fn train_ubm(frames: &DMatrix<f64>, cfg: &UbmConfig) -> Result<(GmmModel, UbmReport)> {
    let (n, d) = frames.shape();
    let c = cfg.components;
    if c == 0 || d == 0 {
        return Err(Error::Config("UBM needs at least one component and one dimension".into()));
    }
    if n < c {
        return Err(Error::Input(format!("{n} frames cannot train {c} components")));
    }
    if !(cfg.variance_floor > 0.0) {
        return Err(Error::Config("variance_floor must be positive".into()));
    }
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature value".into()));
    }
    let mean = frames.row_mean();
    let global_var: Vec<f64> = (0..d)
        .map(|k| frames.column(k).iter().map(|v| (v - mean[k]).powi(2)).sum::<f64>() / n as f64)
        .collect();
    let floor: Vec<f64> = global_var.iter().map(|v| (v * cfg.variance_floor).max(1e-12)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (means, assign) = kmeans_init(frames, c, cfg.kmeans_iterations, &mut rng);
    let mut counts = vec![0usize; c];
    let mut variances = DMatrix::<f64>::zeros(c, d);
    for (t, &a) in assign.iter().enumerate() {
        counts[a] += 1;
        for k in 0..d {
            variances[(a, k)] += (frames[(t, k)] - means[(a, k)]).powi(2);
        }
    }
    for j in 0..c {
        for k in 0..d {
            variances[(j, k)] = if counts[j] > 1 {
                (variances[(j, k)] / counts[j] as f64).max(floor[k])
            } else {
                global_var[k].max(floor[k])
            };
        }
    }
    let weights = DVector::from_iterator(c, counts.iter().map(|&k| (k.max(1)) as f64));
    let weights = &weights / weights.sum();
    let mut gmm = GmmModel {
        weights,
        means,
        variances,
    };

    let mut report = UbmReport {
        log_likelihood: Vec::with_capacity(cfg.em_iterations + 1),
        reseeded: 0,
    };
    let mut post = vec![0.0; c];
    let mut row = vec![0.0; d];
    for _ in 0..cfg.em_iterations {
        let consts = gmm.log_consts();
        let inv = gmm.variances.map(|v| 1.0 / v);
        let mut occ = vec![0.0; c];
        let mut first = DMatrix::<f64>::zeros(c, d);
        let mut second = DMatrix::<f64>::zeros(c, d);
        let mut ll = 0.0;
        for t in 0..n {
            row.iter_mut().enumerate().for_each(|(k, v)| *v = frames[(t, k)]);
            ll += gmm.posteriors(&row, &consts, &inv, &mut post);
            for j in 0..c {
                let p = post[j];
                if p == 0.0 {
                    continue;
                }
                occ[j] += p;
                for k in 0..d {
                    first[(j, k)] += p * row[k];
                    second[(j, k)] += p * row[k] * row[k];
                }
            }
        }
        report.log_likelihood.push(ll);
        let total: f64 = occ.iter().sum();
        for j in 0..c {
            if occ[j] < 1e-8 {
                continue;
            }
            gmm.weights[j] = occ[j] / total;
            for k in 0..d {
                let m = first[(j, k)] / occ[j];
                gmm.means[(j, k)] = m;
                gmm.variances[(j, k)] = (second[(j, k)] / occ[j] - m * m).max(floor[k]);
            }
        }
        // Empty components take half of the heaviest one, nudged apart.
        for j in 0..c {
            if occ[j] >= 1e-8 {
                continue;
            }
            let heavy = (0..c).max_by(|&a, &b| occ[a].total_cmp(&occ[b])).unwrap_or(0);
            let half = gmm.weights[heavy] / 2.0;
            gmm.weights[heavy] = half;
            gmm.weights[j] = half;
            for k in 0..d {
                let sd = gmm.variances[(heavy, k)].sqrt();
                let v = gmm.variances[(heavy, k)];
                let m = gmm.means[(heavy, k)];
                gmm.means[(heavy, k)] = m + 0.2 * sd;
                gmm.means[(j, k)] = m - 0.2 * sd;
                gmm.variances[(j, k)] = v;
            }
            occ[j] = occ[heavy] / 2.0;
            occ[heavy] /= 2.0;
            report.reseeded += 1;
            log::warn!("UBM component {j} lost all frames; re-seeded from component {heavy}");
        }
        let s = gmm.weights.sum();
        gmm.weights /= s;
    }
    report.log_likelihood.push(gmm.log_likelihood(frames));
    Ok((gmm, report))
}

/// Zeroth- and centred first-order Baum-Welch statistics of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct BwStats {
    pub n: DVector<f64>,
    /// `F~_c = sum_t gamma_t(c) (x_t - mu_c)`, one row per component.
    pub f: DMatrix<f64>,
    pub frames: usize,
}

impl BwStats {
    pub fn zeros(c: usize, d: usize) -> Self {
        Self {
            n: DVector::zeros(c),
            f: DMatrix::zeros(c, d),
            frames: 0,
        }
    }

    /// True when no frames contributed.
    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }
}

pub fn accumulate_stats(frames: &DMatrix<f64>, ubm: &GmmModel) -> Result<BwStats> {
    let (n, d) = frames.shape();
    let c = ubm.n_components();
    if n > 0 && d != ubm.dim() {
        return Err(Error::Input(format!(
            "{d}-dimensional frames against a {}-dimensional UBM",
            ubm.dim()
        )));
    }
    let mut stats = BwStats::zeros(c, ubm.dim());
    stats.frames = n;
    let consts = ubm.log_consts();
    let inv = ubm.variances.map(|v| 1.0 / v);
    let mut post = vec![0.0; c];
    let mut row = vec![0.0; d];
    for t in 0..n {
        row.iter_mut().enumerate().for_each(|(k, v)| *v = frames[(t, k)]);
        ubm.posteriors(&row, &consts, &inv, &mut post);
        for (j, &p) in post.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            stats.n[j] += p;
            for k in 0..d {
                stats.f[(j, k)] += p * (row[k] - ubm.means[(j, k)]);
            }
        }
    }
    Ok(stats)
}

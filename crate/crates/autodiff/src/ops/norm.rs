//! Batch normalization over the channel axis of `[N, C, S...]` tensors.

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub training: bool,
}

/// Per-channel mean and biased variance.
pub fn batch_stats(x: &[f64], n: usize, c: usize, s: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (n * s) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * s;
            mean[ch] += x[off..off + s].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * s;
            var[ch] += x[off..off + s]
                .iter()
                .map(|v| (v - mean[ch]).powi(2))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    (mean, var)
}

#[allow(clippy::too_many_arguments)]
pub fn forward(
    x: &[f64],
    n: usize,
    c: usize,
    s: usize,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    training: bool,
) -> (Vec<f64>, BnCache) {
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * s;
            for i in off..off + s {
                let h = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                y[i] = gamma[ch] * h + beta[ch];
            }
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            training,
        },
    )
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn backward(
    cache: &BnCache,
    dy: &[f64],
    n: usize,
    c: usize,
    s: usize,
    gamma: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = (n * s) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * s;
            for i in off..off + s {
                dgamma[ch] += dy[i] * cache.xhat[i];
                dbeta[ch] += dy[i];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * s;
            let k = gamma[ch] * cache.inv_std[ch];
            for i in off..off + s {
                dx[i] = if cache.training {
                    k * (dy[i] - dbeta[ch] / m - cache.xhat[i] * dgamma[ch] / m)
                } else {
                    k * dy[i]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

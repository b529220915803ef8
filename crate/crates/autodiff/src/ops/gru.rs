//! Fused GRU layer with back-propagation through time.
//!
//! Gate layout inside the `3H` axis is `[reset, update, candidate]`:
//!
//! ```text
//! r = σ(x·W_r + b_r + h·U_r + c_r)
//! z = σ(x·W_z + b_z + h·U_z + c_z)
//! n = tanh(x·W_n + b_n + r ⊙ (h·U_n + c_n))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```

use super::gemm::gemm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruDims {
    pub n: usize,
    pub t: usize,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    /// `[T, N, H]` each
    r: Vec<f64>,
    z: Vec<f64>,
    cand: Vec<f64>,
    /// recurrent candidate pre-activation `h·U_n + c_n`, `[T, N, H]`
    hn: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `x` is `[N, T, C]`; returns the hidden sequence `[N, T, H]`.
pub fn forward(
    d: GruDims,
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    b_ih: &[f64],
    b_hh: &[f64],
) -> (Vec<f64>, GruCache) {
    let GruDims { n, t, input, hidden: h } = d;
    let g3 = 3 * h;
    // input projections for every (sample, step) at once: [N·T, 3H]
    let mut xp = vec![0.0; n * t * g3];
    for row in xp.chunks_mut(g3) {
        row.copy_from_slice(b_ih);
    }
    gemm(n * t, input, g3, x, false, w_ih, false, 1.0, &mut xp);

    let mut out = vec![0.0; n * t * h];
    let mut cache = GruCache {
        r: vec![0.0; t * n * h],
        z: vec![0.0; t * n * h],
        cand: vec![0.0; t * n * h],
        hn: vec![0.0; t * n * h],
    };
    let mut h_prev = vec![0.0; n * h];
    let mut hp = vec![0.0; n * g3];
    for step in 0..t {
        for row in hp.chunks_mut(g3) {
            row.copy_from_slice(b_hh);
        }
        gemm(n, h, g3, &h_prev, false, w_hh, false, 1.0, &mut hp);
        for s in 0..n {
            let xrow = &xp[(s * t + step) * g3..(s * t + step + 1) * g3];
            let hrow = &hp[s * g3..(s + 1) * g3];
            let base = (step * n + s) * h;
            for j in 0..h {
                let r = sigmoid(xrow[j] + hrow[j]);
                let z = sigmoid(xrow[h + j] + hrow[h + j]);
                let hn = hrow[2 * h + j];
                let c = (xrow[2 * h + j] + r * hn).tanh();
                let hv = (1.0 - z) * c + z * h_prev[s * h + j];
                cache.r[base + j] = r;
                cache.z[base + j] = z;
                cache.cand[base + j] = c;
                cache.hn[base + j] = hn;
                out[(s * t + step) * h + j] = hv;
            }
        }
        for s in 0..n {
            let src = &out[(s * t + step) * h..(s * t + step + 1) * h];
            h_prev[s * h..(s + 1) * h].copy_from_slice(src);
        }
    }
    (out, cache)
}

pub struct GruGrads {
    pub dx: Option<Vec<f64>>,
    pub dw_ih: Vec<f64>,
    pub dw_hh: Vec<f64>,
    pub db_ih: Vec<f64>,
    pub db_hh: Vec<f64>,
}

/// `dout` is the gradient w.r.t. every output step, `[N, T, H]`.
#[allow(clippy::too_many_arguments)]
pub fn backward(
    d: GruDims,
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    out: &[f64],
    cache: &GruCache,
    dout: &[f64],
    need_dx: bool,
) -> GruGrads {
    let GruDims { n, t, input, hidden: h } = d;
    let g3 = 3 * h;
    let mut dxp = vec![0.0; n * t * g3];
    let mut dw_hh = vec![0.0; h * g3];
    let mut db_hh = vec![0.0; g3];
    let mut dh_next = vec![0.0; n * h];
    let mut dhp = vec![0.0; n * g3];
    let mut h_prev = vec![0.0; n * h];
    for step in (0..t).rev() {
        for s in 0..n {
            for j in 0..h {
                h_prev[s * h + j] = if step == 0 {
                    0.0
                } else {
                    out[(s * t + step - 1) * h + j]
                };
            }
        }
        for s in 0..n {
            let base = (step * n + s) * h;
            let drow = &mut dxp[(s * t + step) * g3..(s * t + step + 1) * g3];
            let hrow = &mut dhp[s * g3..(s + 1) * g3];
            for j in 0..h {
                let dh = dout[(s * t + step) * h + j] + dh_next[s * h + j];
                let (r, z, c, hn) = (
                    cache.r[base + j],
                    cache.z[base + j],
                    cache.cand[base + j],
                    cache.hn[base + j],
                );
                let hprev = h_prev[s * h + j];
                let dc = dh * (1.0 - z) * (1.0 - c * c);
                let dz = dh * (hprev - c) * z * (1.0 - z);
                let dr = dc * hn * r * (1.0 - r);
                drow[j] = dr;
                drow[h + j] = dz;
                drow[2 * h + j] = dc;
                hrow[j] = dr;
                hrow[h + j] = dz;
                hrow[2 * h + j] = dc * r;
                dh_next[s * h + j] = dh * z;
            }
        }
        // dU += h_prevᵀ · dhp ; dh_prev += dhp · Uᵀ
        gemm(h, n, g3, &h_prev, true, &dhp, false, 1.0, &mut dw_hh);
        for row in dhp.chunks(g3) {
            for (acc, v) in db_hh.iter_mut().zip(row) {
                *acc += v;
            }
        }
        gemm(n, g3, h, &dhp, false, w_hh, true, 1.0, &mut dh_next);
    }
    let mut dw_ih = vec![0.0; input * g3];
    gemm(input, n * t, g3, x, true, &dxp, false, 0.0, &mut dw_ih);
    let mut db_ih = vec![0.0; g3];
    for row in dxp.chunks(g3) {
        for (acc, v) in db_ih.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; n * t * input];
        gemm(n * t, g3, input, &dxp, false, w_ih, true, 0.0, &mut dx);
        dx
    });
    GruGrads {
        dx,
        dw_ih,
        dw_hh,
        db_ih,
        db_hh,
    }
}

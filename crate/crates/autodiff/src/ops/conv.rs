use super::gemm::{gemm_strided, MatRef};

/// Upper bound on the unfolded block, in values, so it stays cache resident.
const COL_BUDGET: usize = 1 << 15;

/// Geometry of a 2-D convolution over an `[N, C, H, W]` input.
///
/// 1-D convolutions run through the same code with `h = kh = sh = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    /// top, bottom, left, right
    pub pad: [usize; 4],
    pub ho: usize,
    pub wo: usize,
}

/// Output length of a padded strided window, `None` when the window does not fit.
pub fn out_len(input: usize, kernel: usize, stride: usize, pad_lo: usize, pad_hi: usize) -> Option<usize> {
    let padded = input + pad_lo + pad_hi;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Asymmetric padding that yields `ceil(input / stride)` outputs; the extra
/// element, if any, goes to the high side.
pub fn ceil_mode_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (total / 2, total - total / 2)
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfold output rows `rows` of one sample (`[C, H, W]`) into a
    /// `[C·kh·kw, rows·wo]` matrix.
    fn im2col(&self, x: &[f64], rows: std::ops::Range<usize>, col: &mut [f64]) {
        let p = rows.len() * self.wo;
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut col[row * p..(row + 1) * p];
                    let (lo, hi) = self.ow_range(kj);
                    let off = (lo * self.sw + kj).saturating_sub(self.pad[2]);
                    for (oh, out_row) in rows.clone().zip(dst.chunks_mut(self.wo)) {
                        let Some(ih) = self.in_row(oh, ki) else {
                            out_row.fill(0.0);
                            continue;
                        };
                        out_row[..lo].fill(0.0);
                        out_row[hi..].fill(0.0);
                        if hi == lo {
                            continue;
                        }
                        let src = &plane[ih * self.w + off..(ih + 1) * self.w];
                        let seg = &mut out_row[lo..hi];
                        if self.sw == 1 {
                            seg.copy_from_slice(&src[..hi - lo]);
                        } else {
                            seg.iter_mut().zip(src.iter().step_by(self.sw)).for_each(|(d, v)| *d = *v);
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatter-add columns back into `[C, H, W]`.
    fn col2im(&self, col: &[f64], rows: std::ops::Range<usize>, dx: &mut [f64]) {
        let p = rows.len() * self.wo;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &col[row * p..(row + 1) * p];
                    let (lo, hi) = self.ow_range(kj);
                    let off = (lo * self.sw + kj).saturating_sub(self.pad[2]);
                    for (oh, src_row) in rows.clone().zip(src.chunks(self.wo)) {
                        let Some(ih) = self.in_row(oh, ki) else { continue };
                        if hi == lo {
                            continue;
                        }
                        let dst = &mut plane[ih * self.w + off..(ih + 1) * self.w];
                        let seg = &src_row[lo..hi];
                        if self.sw == 1 {
                            dst.iter_mut().zip(seg).for_each(|(d, v)| *d += v);
                        } else {
                            dst.iter_mut().step_by(self.sw).zip(seg).for_each(|(d, v)| *d += v);
                        }
                    }
                }
            }
        }
    }

    /// Valid output columns `[lo, hi)` for kernel column `kj`.
    fn ow_range(&self, kj: usize) -> (usize, usize) {
        let pl = self.pad[2];
        // iw = ow*sw + kj - pl must lie in [0, w)
        let lo = if kj >= pl { 0 } else { (pl - kj).div_ceil(self.sw).min(self.wo) };
        let hi = if self.w + pl > kj { ((self.w + pl - kj).div_ceil(self.sw)).min(self.wo) } else { 0 };
        (lo, hi.max(lo))
    }

    /// Input row for output row `oh` and kernel row `ki`, if inside the image.
    fn in_row(&self, oh: usize, ki: usize) -> Option<usize> {
        let ih = (oh * self.sh + ki).checked_sub(self.pad[0])?;
        (ih < self.h).then_some(ih)
    }

    /// Direct loops over taps; reference for the unfolded path.
    #[cfg(test)]
    fn forward_direct(&self, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let (p, hw) = (self.p(), self.h * self.w);
        let ranges: Vec<(usize, usize, usize)> = (0..self.kw)
            .map(|kj| {
                let (lo, hi) = self.ow_range(kj);
                (lo, hi, (lo * self.sw + kj).saturating_sub(self.pad[2]).min(self.w))
            })
            .collect();
        let mut y = vec![0.0; self.n * self.cout * p];
        for s in 0..self.n {
            for co in 0..self.cout {
                let yo = &mut y[(s * self.cout + co) * p..(s * self.cout + co + 1) * p];
                for (oh, row) in yo.chunks_mut(self.wo).enumerate() {
                    row.iter_mut().for_each(|v| *v = bias[co]);
                    for ci in 0..self.cin {
                        let plane = &x[(s * self.cin + ci) * hw..(s * self.cin + ci + 1) * hw];
                        for ki in 0..self.kh {
                            let Some(ih) = self.in_row(oh, ki) else { continue };
                            let src_row = &plane[ih * self.w..(ih + 1) * self.w];
                            let wrow = &weight[((co * self.cin + ci) * self.kh + ki) * self.kw..][..self.kw];
                            for (&wv, &(lo, hi, off)) in wrow.iter().zip(&ranges) {
                                let dst = &mut row[lo..hi];
                                if self.sw == 1 {
                                    dst.iter_mut().zip(&src_row[off..]).for_each(|(d, v)| *d += wv * v);
                                } else {
                                    dst.iter_mut()
                                        .zip(src_row[off..].iter().step_by(self.sw))
                                        .for_each(|(d, v)| *d += wv * v);
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    #[cfg(test)]
    fn backward_direct(
        &self,
        x: &[f64],
        weight: &[f64],
        dy: &[f64],
        need_dx: bool,
    ) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let (p, hw) = (self.p(), self.h * self.w);
        let ranges: Vec<(usize, usize, usize)> = (0..self.kw)
            .map(|kj| {
                let (lo, hi) = self.ow_range(kj);
                (lo, hi, (lo * self.sw + kj).saturating_sub(self.pad[2]).min(self.w))
            })
            .collect();
        let mut dw = vec![0.0; self.cout * self.k()];
        let mut db = vec![0.0; self.cout];
        let mut dx = need_dx.then(|| vec![0.0; self.n * self.cin * hw]);
        for s in 0..self.n {
            for co in 0..self.cout {
                let g = &dy[(s * self.cout + co) * p..(s * self.cout + co + 1) * p];
                db[co] += g.iter().sum::<f64>();
                for (oh, grow) in g.chunks(self.wo).enumerate() {
                    for ci in 0..self.cin {
                        let base = (s * self.cin + ci) * hw;
                        for ki in 0..self.kh {
                            let Some(ih) = self.in_row(oh, ki) else { continue };
                            let wbase = ((co * self.cin + ci) * self.kh + ki) * self.kw;
                            let xrow = &x[base + ih * self.w..base + (ih + 1) * self.w];
                            for (kj, &(lo, hi, off)) in ranges.iter().enumerate() {
                                let gseg = &grow[lo..hi];
                                dw[wbase + kj] += if self.sw == 1 {
                                    gseg.iter().zip(&xrow[off..]).map(|(a, b)| a * b).sum::<f64>()
                                } else {
                                    gseg.iter()
                                        .zip(xrow[off..].iter().step_by(self.sw))
                                        .map(|(a, b)| a * b)
                                        .sum::<f64>()
                                };
                            }
                            if let Some(dx) = dx.as_mut() {
                                let dxrow = &mut dx[base + ih * self.w..base + (ih + 1) * self.w];
                                for (kj, &(lo, hi, off)) in ranges.iter().enumerate() {
                                    let wv = weight[wbase + kj];
                                    let gseg = &grow[lo..hi];
                                    if self.sw == 1 {
                                        dxrow[off..].iter_mut().zip(gseg).for_each(|(d, v)| *d += wv * v);
                                    } else {
                                        dxrow[off..]
                                            .iter_mut()
                                            .step_by(self.sw)
                                            .zip(gseg)
                                            .for_each(|(d, v)| *d += wv * v);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        (dx, dw, db)
    }

    /// Output rows per unfolded block.
    fn block_rows(&self) -> usize {
        (COL_BUDGET / (self.k() * self.wo).max(1)).clamp(1, self.ho.max(1))
    }

    pub fn forward(&self, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let (k, p) = (self.k(), self.p());
        let in_sz = self.cin * self.h * self.w;
        let out_sz = self.cout * p;
        let mut y = vec![0.0; self.n * out_sz];
        let br = self.block_rows();
        let mut col = vec![0.0; k * br * self.wo];
        let wv = MatRef::row_major(weight, k);
        for s in 0..self.n {
            let xs = &x[s * in_sz..(s + 1) * in_sz];
            let ys = &mut y[s * out_sz..(s + 1) * out_sz];
            for (co, row) in ys.chunks_mut(p).enumerate() {
                row.fill(bias[co]);
            }
            for oh0 in (0..self.ho).step_by(br) {
                let rows = oh0..(oh0 + br).min(self.ho);
                let cp = rows.len() * self.wo;
                self.im2col(xs, rows, &mut col[..k * cp]);
                let cv = MatRef::row_major(&col[..k * cp], cp);
                gemm_strided(self.cout, k, cp, wv, cv, 1.0, &mut ys[oh0 * self.wo..], p, 1);
            }
        }
        y
    }

    /// Returns `(dx, dweight, dbias)`; `dx` only when requested.
    pub fn backward(
        &self,
        x: &[f64],
        weight: &[f64],
        dy: &[f64],
        need_dx: bool,
    ) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let (k, p) = (self.k(), self.p());
        let in_sz = self.cin * self.h * self.w;
        let out_sz = self.cout * p;
        let mut dw = vec![0.0; self.cout * k];
        let mut db = vec![0.0; self.cout];
        let mut dx = need_dx.then(|| vec![0.0; self.n * in_sz]);
        let br = self.block_rows();
        let mut col = vec![0.0; k * br * self.wo];
        let mut dcol = vec![0.0; k * br * self.wo];
        let wt = MatRef::row_major(weight, k).t();
        for s in 0..self.n {
            let dys = &dy[s * out_sz..(s + 1) * out_sz];
            for (co, row) in dys.chunks(p).enumerate() {
                db[co] += row.iter().sum::<f64>();
            }
            let xs = &x[s * in_sz..(s + 1) * in_sz];
            for oh0 in (0..self.ho).step_by(br) {
                let rows = oh0..(oh0 + br).min(self.ho);
                let cp = rows.len() * self.wo;
                let g = MatRef {
                    data: &dys[oh0 * self.wo..],
                    rs: p,
                    cs: 1,
                };
                self.im2col(xs, rows.clone(), &mut col[..k * cp]);
                // dW[cout×k] += dY · colᵀ
                let ct = MatRef::row_major(&col[..k * cp], cp).t();
                gemm_strided(self.cout, cp, k, g, ct, 1.0, &mut dw, k, 1);
                if let Some(dx) = dx.as_mut() {
                    // dcol[k×cp] = Wᵀ · dY
                    gemm_strided(k, self.cout, cp, wt, g, 0.0, &mut dcol[..k * cp], cp, 1);
                    self.col2im(&dcol[..k * cp], rows, &mut dx[s * in_sz..(s + 1) * in_sz]);
                }
            }
        }
        (dx, dw, db)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_mode_padding_hits_table_widths() {
        // 1025 → 257 → 65 → 17 with kernel 5, stride 4
        let mut w = 1025;
        for want in [257, 65, 17] {
            let (lo, hi) = ceil_mode_padding(w, 5, 4);
            w = out_len(w, 5, 4, lo, hi).unwrap();
            assert_eq!(w, want);
        }
        let mut t = 120;
        for want in [60, 30, 15] {
            let (lo, hi) = ceil_mode_padding(t, 3, 2);
            t = out_len(t, 3, 2, lo, hi).unwrap();
            assert_eq!(t, want);
        }
    }

    #[test]
    fn unfolded_path_matches_direct_loops() {
        let mut seed = 1u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 33) as usize
        };
        for _ in 0..200 {
            let (kh, kw) = (1 + next() % 3, 1 + next() % 5);
            let (sh, sw) = (1 + next() % 2, 1 + next() % 4);
            let same = next() % 2 == 0;
            // Padded inputs may be narrower than the kernel.
            let (h, w) = if same { (1 + next() % 6, 1 + next() % 9) } else { (kh + next() % 6, kw + next() % 9) };
            let (pt, pb) = if same { ceil_mode_padding(h, kh, sh) } else { (0, 0) };
            let (pl, pr) = if same { ceil_mode_padding(w, kw, sw) } else { (0, 0) };
            let g = ConvGeom {
                n: 1 + next() % 2,
                cin: 1 + next() % 3,
                h,
                w,
                cout: 1 + next() % 3,
                kh,
                kw,
                sh,
                sw,
                pad: [pt, pb, pl, pr],
                ho: out_len(h, kh, sh, pt, pb).unwrap(),
                wo: out_len(w, kw, sw, pl, pr).unwrap(),
            };
            let val = |i: usize, f: f64| ((i as f64 + 1.0) * f).sin();
            let x: Vec<f64> = (0..g.n * g.cin * h * w).map(|i| val(i, 0.7)).collect();
            let wt: Vec<f64> = (0..g.cout * g.k()).map(|i| val(i, 1.3)).collect();
            let b: Vec<f64> = (0..g.cout).map(|i| val(i, 2.1)).collect();
            let dy: Vec<f64> = (0..g.n * g.cout * g.p()).map(|i| val(i, 0.3)).collect();
            let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
            assert!(close(&g.forward_direct(&x, &wt, &b), &g.forward(&x, &wt, &b)), "{g:?}");
            let (dx1, dw1, db1) = g.backward_direct(&x, &wt, &dy, true);
            let (dx2, dw2, db2) = g.backward(&x, &wt, &dy, true);
            assert!(close(&dx1.unwrap(), &dx2.unwrap()) && close(&dw1, &dw2) && close(&db1, &db2), "{g:?}");
        }
    }

    #[test]
    fn window_larger_than_input_has_no_output() {
        assert_eq!(out_len(2, 3, 1, 0, 0), None);
        assert_eq!(out_len(2, 3, 1, 1, 0), Some(1));
    }
}

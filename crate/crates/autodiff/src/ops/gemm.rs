/// Row count of the packed micro-kernel.
const KERNEL_ROWS: usize = 8;

/// Strided read-only matrix view: element `(i, j)` is `data[i*rs + j*cs]`.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn fits(&self, rows: usize, cols: usize) -> bool {
        rows == 0 || cols == 0 || (rows - 1) * self.rs + (cols - 1) * self.cs < self.data.len()
    }
}

/// `c = a · b + beta · c` for an `m×k` view `a`, a `k×n` view `b` and an
/// `m×n` output with row stride `rsc` and column stride `csc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    let cview = MatRef { data: c, rs: rsc, cs: csc };
    assert!(a.fits(m, k) && b.fits(k, n) && cview.fits(m, n));
    if m == 0 || n == 0 {
        return;
    }
    let s = |v: usize| v as isize;
    // SAFETY: every addressed element lies inside its slice (asserted above).
    unsafe {
        if m < KERNEL_ROWS && n > m {
            // Few rows pack poorly; compute cᵀ = bᵀ · aᵀ instead.
            matrixmultiply::dgemm(
                n,
                k,
                m,
                1.0,
                b.data.as_ptr(),
                s(b.cs),
                s(b.rs),
                a.data.as_ptr(),
                s(a.cs),
                s(a.rs),
                beta,
                c.as_mut_ptr(),
                s(csc),
                s(rsc),
            );
        } else {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                s(a.rs),
                s(a.cs),
                b.data.as_ptr(),
                s(b.rs),
                s(b.cs),
                beta,
                c.as_mut_ptr(),
                s(rsc),
                s(csc),
            );
        }
    }
}

/// `c = op(a) · op(b) + beta · c` on row-major slices.
///
/// `a` is `m×k` (stored `k×m` when `a_t`), `b` is `k×n` (stored `n×k` when
/// `b_t`), `c` is `m×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let av = if a_t { MatRef::row_major(a, m).t() } else { MatRef::row_major(a, k) };
    let bv = if b_t { MatRef::row_major(b, k).t() } else { MatRef::row_major(b, n) };
    gemm_strided(m, k, n, av, bv, beta, c, n, 1);
}

//! Row-major dense kernels.
//!
//! Every kernel accumulates each output element as `c += a[.., 0]*b[0, ..]`,
//! then `k = 1`, `k = 2`, ... in increasing inner index, so results agree bit
//! for bit with a naive triple loop. No fused multiply-add is ever emitted;
//! the SIMD variants only widen the lanes. Kernels that skip zero entries of
//! `a` can differ from the naive loop only in the sign of an exact zero.

use std::sync::OnceLock;

const MR: usize = 4;
const NR: usize = 32;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Level {
    Avx512,
    Avx2,
    Portable,
}

fn level() -> Level {
    static LEVEL: OnceLock<Level> = OnceLock::new();
    *LEVEL.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx512f") {
                return Level::Avx512;
            }
            if std::is_x86_feature_detected!("avx2") {
                return Level::Avx2;
            }
        }
        Level::Portable
    })
}

pub(crate) fn has_avx512() -> bool {
    level() == Level::Avx512
}

macro_rules! dispatch {
    ($body:ident, $avx512:ident, $avx2:ident, ($($arg:expr),*)) => {{
        match level() {
            #[cfg(target_arch = "x86_64")]
            // SAFETY: the feature was detected at runtime.
            Level::Avx512 => unsafe { $avx512($($arg),*) },
            #[cfg(target_arch = "x86_64")]
            // SAFETY: as above.
            Level::Avx2 => unsafe { $avx2($($arg),*) },
            _ => $body($($arg),*),
        }
    }};
}

macro_rules! multiversion {
    ($body:ident, $avx512:ident, $avx2:ident) => {
        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx512f")]
        unsafe fn $avx512(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
            $body(a, b, c, m, k, n)
        }

        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2")]
        unsafe fn $avx2(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
            $body(a, b, c, m, k, n)
        }
    };
}

fn check(a: &[f64], b: &[f64], c: &[f64], a_len: usize, b_len: usize, c_len: usize) {
    assert!(a.len() >= a_len, "lhs too short");
    assert!(b.len() >= b_len, "rhs too short");
    assert!(c.len() >= c_len, "output too short");
}

/// `C[m×n] += A[m×k] · B[k×n]`, register-blocked.
pub fn gemm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    check(a, b, c, m * k, k * n, m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    dispatch!(gemm_body, gemm_avx512, gemm_avx2, (a, b, c, m, k, n))
}

/// `C[m×n] += A[m×k] · B[k×n]`, skipping zero entries of `A`. Intended for
/// spike matrices, where most entries are exactly zero.
pub fn gemm_sparse_a(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    check(a, b, c, m * k, k * n, m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    dispatch!(sparse_body, sparse_avx512, sparse_avx2, (a, b, c, m, k, n))
}

/// `C[k×n] += A[m×k]ᵀ · B[m×n]`, skipping zero entries of `A`. Each output
/// element accumulates over rows `0..m` in increasing order.
pub fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    check(a, b, c, m * k, m * n, k * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    dispatch!(tn_body, tn_avx512, tn_avx2, (a, b, c, m, k, n))
}

multiversion!(gemm_body, gemm_avx512, gemm_avx2);
multiversion!(sparse_body, sparse_avx512, sparse_avx2);
multiversion!(tn_body, tn_avx512, tn_avx2);

#[inline(always)]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline(always)]
fn gemm_body(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let m_main = m - m % MR;
    let n_main = n - n % NR;

    // A row panel is packed column-major so the inner loop reads it
    // contiguously; B stays in place.
    let mut panel = vec![0.0f64; MR * k];
    let mut i = 0;
    while i < m_main {
        for kk in 0..k {
            for r in 0..MR {
                panel[kk * MR + r] = a[(i + r) * k + kk];
            }
        }
        let mut j = 0;
        while j < n_main {
            let mut acc = [[0.0f64; NR]; MR];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(i + r) * n + j..(i + r) * n + j + NR]);
            }
            for kk in 0..k {
                let bv: &[f64; NR] = b[kk * n + j..kk * n + j + NR].try_into().unwrap();
                let av: &[f64; MR] = panel[kk * MR..kk * MR + MR].try_into().unwrap();
                for (row, &ar) in acc.iter_mut().zip(av) {
                    for (x, &bq) in row.iter_mut().zip(bv) {
                        *x += ar * bq;
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(row);
            }
            j += NR;
        }
        i += MR;
    }

    // Column tail for the blocked rows.
    if n_main < n {
        for i in 0..m_main {
            let crow = &mut c[i * n + n_main..(i + 1) * n];
            for kk in 0..k {
                axpy(a[i * k + kk], &b[kk * n + n_main..(kk + 1) * n], crow);
            }
        }
    }
    // Row tail, full width.
    for i in m_main..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            axpy(a[i * k + kk], &b[kk * n..(kk + 1) * n], crow);
        }
    }
}

#[inline(always)]
fn sparse_body(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av != 0.0 {
                axpy(av, &b[kk * n..(kk + 1) * n], crow);
            }
        }
    }
}

#[inline(always)]
fn tn_body(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av != 0.0 {
                axpy(av, brow, &mut c[kk * n..(kk + 1) * n]);
            }
        }
    }
}

/// Column sums of `A[m×n]`, accumulated in row order into `out[n]`.
pub fn column_sums_into(a: &[f64], m: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for (o, v) in out.iter_mut().zip(&a[i * n..(i + 1) * n]) {
            *o += v;
        }
    }
}

/// Returns the transpose of a row-major `rows × cols` buffer.
pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

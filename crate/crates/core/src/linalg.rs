//! Dense row-major products used by the solvers.

/// `out = X v` for row-major `x` of shape `(n, p)`.
pub(crate) fn matvec(x: &[f64], p: usize, v: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(x.chunks_exact(p)) {
        *o = dot(row, v);
    }
}

/// `out = X^T r` for row-major `x` of shape `(n, p)`.
pub(crate) fn matvec_t(x: &[f64], p: usize, r: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for (row, &rm) in x.chunks_exact(p).zip(r) {
        if rm != 0.0 {
            for (o, &xv) in out.iter_mut().zip(row) {
                *o += rm * xv;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize without reassociation
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

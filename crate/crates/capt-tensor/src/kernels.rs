//! Hot numeric loops. Matmuls use the i-k-j (axpy) order so the inner loop
//! streams rows of both operands. Parallel variants partition output rows,
//! which keeps results bit-identical for any thread count.

use rayon::prelude::*;

/// Flop threshold below which parallel dispatch costs more than it saves.
const PAR_MIN_FLOPS: usize = 1 << 17;

/// out[m x p] += a[m x k] * b[k x p]
pub fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, p: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(out.len(), m * p);
    let row = |i: usize, orow: &mut [f64]| {
        let arow = &a[i * k..(i + 1) * k];
        for (l, &av) in arow.iter().enumerate() {
            let brow = &b[l * p..(l + 1) * p];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if m * k * p >= PAR_MIN_FLOPS {
        out.par_chunks_mut(p).enumerate().for_each(|(i, orow)| row(i, orow));
    } else {
        for (i, orow) in out.chunks_mut(p).enumerate() {
            row(i, orow);
        }
    }
}

/// out[m x k] += g[m x p] * b[k x p]^T  (rows of g dotted with rows of b)
pub fn matmul_nt_acc(g: &[f64], b: &[f64], m: usize, k: usize, p: usize, out: &mut [f64]) {
    debug_assert_eq!(g.len(), m * p);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(out.len(), m * k);
    let row = |i: usize, orow: &mut [f64]| {
        let grow = &g[i * p..(i + 1) * p];
        for (l, o) in orow.iter_mut().enumerate() {
            let brow = &b[l * p..(l + 1) * p];
            let mut acc = 0.0;
            for (gv, bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            *o += acc;
        }
    };
    if m * k * p >= PAR_MIN_FLOPS {
        out.par_chunks_mut(k).enumerate().for_each(|(i, orow)| row(i, orow));
    } else {
        for (i, orow) in out.chunks_mut(k).enumerate() {
            row(i, orow);
        }
    }
}

/// out[k x p] += a[m x k]^T * g[m x p]
pub fn matmul_tn_acc(a: &[f64], g: &[f64], m: usize, k: usize, p: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * p);
    debug_assert_eq!(out.len(), k * p);
    // Sequential over i: every i touches all of out, so row-partitioning out
    // by l keeps determinism; with one accumulation pass per l this stays
    // cache-friendly only for small k, so partition on l.
    let lrow = |l: usize, orow: &mut [f64]| {
        for i in 0..m {
            let av = a[i * k + l];
            if av != 0.0 {
                let grow = &g[i * p..(i + 1) * p];
                for (o, &gv) in orow.iter_mut().zip(grow) {
                    *o += av * gv;
                }
            }
        }
    };
    if m * k * p >= PAR_MIN_FLOPS {
        out.par_chunks_mut(p).enumerate().for_each(|(l, orow)| lrow(l, orow));
    } else {
        for (l, orow) in out.chunks_mut(p).enumerate() {
            lrow(l, orow);
        }
    }
}

/// Row-wise stabilized softmax over an n x d matrix, in place.
pub fn softmax_rows_inplace(x: &mut [f64], d: usize) {
    for row in x.chunks_mut(d) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// d/dx softplus = logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(sum(exp(row))) with max-subtraction.
pub fn logsumexp(row: &[f64]) -> f64 {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|&v| (v - mx).exp()).sum();
    mx + s.ln()
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

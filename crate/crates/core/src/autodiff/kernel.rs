//! Plain array math shared by the tape ops and the untaped inference paths.
//!
//! Keeping both paths on the same kernels means a taped forward pass and a
//! raw forward pass produce bit-identical values.

use crate::scalar::Scalar;

/// `out[j] += sum_i x[i] * w[i*cols + j]` for a row vector times a
/// row-major `rows x cols` matrix.
pub fn vecmat_accum<S: Scalar>(x: &[S], w: &[S], cols: usize, out: &mut [S]) {
    debug_assert_eq!(w.len(), x.len() * cols);
    debug_assert_eq!(out.len(), cols);
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

/// Row-major matrix product `a (m x k)` times `b (k x n)`.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for v in out.iter_mut() {
        *v = S::zero();
    }
    for i in 0..m {
        vecmat_accum(&a[i * k..(i + 1) * k], b, n, &mut out[i * n..(i + 1) * n]);
    }
}

pub fn add_assign<S: Scalar>(out: &mut [S], rhs: &[S]) {
    for (o, &r) in out.iter_mut().zip(rhs) {
        *o += r;
    }
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

pub fn sigmoid_inplace<S: Scalar>(xs: &mut [S]) {
    for x in xs.iter_mut() {
        *x = sigmoid(*x);
    }
}

pub fn tanh_inplace<S: Scalar>(xs: &mut [S]) {
    for x in xs.iter_mut() {
        *x = x.tanh();
    }
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let mut out: Vec<S> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: S = out.iter().copied().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// Stable log-softmax; `-inf` logits stay `-inf` (used for masked actions).
pub fn log_softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let sum: S = logits.iter().map(|&v| (v - max).exp()).sum();
    let log_z = max + sum.ln();
    logits.iter().map(|&v| v - log_z).collect()
}

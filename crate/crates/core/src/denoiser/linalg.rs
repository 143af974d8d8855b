//! Dense row-major kernels over slices.

use crate::scalar::Scalar;

/// `out = W x + b` for `W` of shape `rows x x.len()`.
#[inline]
pub fn affine<S: Scalar>(w: &[S], b: &[S], x: &[S], out: &mut [S]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (wi, xi) in row.iter().zip(x) {
            acc += *wi * *xi;
        }
        *o = acc;
    }
}

/// `out = W x`.
#[inline]
pub fn matvec<S: Scalar>(w: &[S], x: &[S], out: &mut [S]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = S::zero();
        for (wi, xi) in row.iter().zip(x) {
            acc += *wi * *xi;
        }
        *o = acc;
    }
}

/// `dx += W^T dy`.
#[inline]
pub fn matvec_t_acc<S: Scalar>(w: &[S], dy: &[S], dx: &mut [S]) {
    let cols = dx.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == S::zero() {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (d, wi) in dx.iter_mut().zip(row) {
            *d += g * *wi;
        }
    }
}

/// `dW += dy x^T`.
#[inline]
pub fn outer_acc<S: Scalar>(dw: &mut [S], dy: &[S], x: &[S]) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == S::zero() {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, xi) in row.iter_mut().zip(x) {
            *d += g * *xi;
        }
    }
}

#[inline]
pub fn add_acc<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub fn silu<S: Scalar>(x: S) -> S {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad<S: Scalar>(x: S) -> S {
    let s = sigmoid(x);
    s * (S::one() + x * (S::one() - s))
}

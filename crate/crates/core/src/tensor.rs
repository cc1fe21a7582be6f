//! Dense row-major tensors and the handful of kernels the encoder needs.
//!
//! Training runs in `f32`; gradient checks run the same code in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Floating-point scalar usable by the encoder.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const DTYPE: &'static str;

    /// # Safety
    /// Same contract as `matrixmultiply::sgemm`: every strided index of
    /// `a`, `b` and `c` must be in bounds and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Borrowed strided matrix.
#[derive(Clone, Copy, Debug)]
pub struct View<'a, F> {
    data: &'a [F],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, F> View<'a, F> {
    /// Contiguous row-major `rows x cols` matrix.
    pub fn new(data: &'a [F], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a [F], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            let last = (rows - 1) * rs + (cols - 1) * cs;
            assert!(last < data.len(), "view {rows}x{cols} (rs={rs}, cs={cs}) exceeds buffer of {}", data.len());
        }
        View { data, rows, cols, rs, cs }
    }

    pub fn t(self) -> Self {
        View {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }
}

/// Mutable strided matrix.
#[derive(Debug)]
pub struct ViewMut<'a, F> {
    data: &'a mut [F],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, F> ViewMut<'a, F> {
    pub fn new(data: &'a mut [F], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a mut [F], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            let last = (rows - 1) * rs + (cols - 1) * cs;
            assert!(last < data.len(), "view {rows}x{cols} (rs={rs}, cs={cs}) exceeds buffer of {}", data.len());
        }
        ViewMut { data, rows, cols, rs, cs }
    }
}

/// `c = alpha * a * b + beta * c`. With `beta == 0` the previous contents of
/// `c` are ignored.
pub fn gemm<F: Real>(alpha: F, a: View<'_, F>, b: View<'_, F>, beta: F, c: ViewMut<'_, F>) {
    assert_eq!(a.cols, b.rows, "inner dimensions");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "output dimensions");
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    // SAFETY: all three views were bounds-checked on construction and `c`
    // is a unique borrow, so it cannot alias `a` or `b`.
    unsafe {
        F::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        )
    }
}

/// `y = x * w + bias` for row-major `x: n x k`, `w: k x m`.
pub fn linear<F: Real>(x: &[F], w: &[F], bias: &[F], n: usize, k: usize, m: usize) -> Vec<F> {
    let mut y = Vec::with_capacity(n * m);
    for _ in 0..n {
        y.extend_from_slice(bias);
    }
    gemm(F::one(), View::new(x, n, k), View::new(w, k, m), F::one(), ViewMut::new(&mut y, n, m));
    y
}

/// Backward of [`linear`]: accumulates `dw += x^T dy`, `db += colsum(dy)`
/// and returns `dx = dy w^T` (or accumulates it into `dx` when given).
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<F: Real>(
    x: &[F],
    w: &[F],
    dy: &[F],
    dw: &mut [F],
    db: &mut [F],
    dx: Option<&mut [F]>,
    n: usize,
    k: usize,
    m: usize,
) {
    gemm(F::one(), View::new(x, n, k).t(), View::new(dy, n, m), F::one(), ViewMut::new(dw, k, m));
    for row in dy.chunks_exact(m) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    if let Some(dx) = dx {
        gemm(F::one(), View::new(dy, n, m), View::new(w, k, m).t(), F::one(), ViewMut::new(dx, n, k));
    }
}

/// Cached statistics of a layer-norm forward pass.
#[derive(Clone, Debug, Default)]
pub struct NormCache<F> {
    pub xhat: Vec<F>,
    pub inv_std: Vec<F>,
}

pub const LN_EPS: f64 = 1e-12;

/// Row-wise layer norm of an `n x d` matrix.
pub fn layer_norm<F: Real>(x: &[F], gamma: &[F], beta: &[F], d: usize) -> (Vec<F>, NormCache<F>) {
    let n = x.len() / d;
    let mut y = vec![F::zero(); x.len()];
    let mut xhat = vec![F::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(n);
    let inv_d = F::one() / F::c(d as f64);
    let eps = F::c(LN_EPS);
    for ((row, yr), hr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)).zip(xhat.chunks_exact_mut(d)) {
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let is = F::one() / (var + eps).sqrt();
        for j in 0..d {
            let h = (row[j] - mean) * is;
            hr[j] = h;
            yr[j] = h * gamma[j] + beta[j];
        }
        inv_std.push(is);
    }
    (y, NormCache { xhat, inv_std })
}

/// Backward of [`layer_norm`]; returns `dx`.
pub fn layer_norm_backward<F: Real>(
    cache: &NormCache<F>,
    gamma: &[F],
    dy: &[F],
    dgamma: &mut [F],
    dbeta: &mut [F],
    d: usize,
) -> Vec<F> {
    let mut dx = vec![F::zero(); dy.len()];
    let inv_d = F::one() / F::c(d as f64);
    let mut dxhat = vec![F::zero(); d];
    for (r, (gr, dxr)) in dy.chunks_exact(d).zip(dx.chunks_exact_mut(d)).enumerate() {
        let hr = &cache.xhat[r * d..(r + 1) * d];
        let mut sum = F::zero();
        let mut dot = F::zero();
        for j in 0..d {
            dgamma[j] += gr[j] * hr[j];
            dbeta[j] += gr[j];
            dxhat[j] = gr[j] * gamma[j];
            sum += dxhat[j];
            dot += dxhat[j] * hr[j];
        }
        let mean = sum * inv_d;
        let mean_dot = dot * inv_d;
        let is = cache.inv_std[r];
        for j in 0..d {
            dxr[j] = is * (dxhat[j] - mean - hr[j] * mean_dot);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<F: Real>(x: F) -> F {
    let half = F::c(0.5);
    let inner = F::c(GELU_C) * (x + F::c(GELU_A) * x * x * x);
    half * x * (F::one() + inner.tanh())
}

pub fn gelu_grad<F: Real>(x: F) -> F {
    let half = F::c(0.5);
    let inner = F::c(GELU_C) * (x + F::c(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = F::c(GELU_C) * (F::one() + F::c(3.0 * GELU_A) * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * dinner
}

/// A named, shaped parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: F) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm<F: Real>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
        let mut c = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                for p in 0..k {
                    c[i * m + j] += a[i * k + p] * b[p * m + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_including_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.0).collect();
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect();
        let mut c = vec![0.0; 8];
        gemm(1.0, View::new(&a, 2, 3), View::new(&b, 3, 4), 0.0, ViewMut::new(&mut c, 2, 4));
        assert_eq!(c, naive(&a, &b, 2, 3, 4));

        // a^T stored as 3x2
        let at: Vec<f64> = (0..3).flat_map(|p| (0..2).map(move |i| (i * 3 + p) as f64 - 2.0)).collect();
        let mut c2 = vec![0.0; 8];
        gemm(1.0, View::new(&at, 3, 2).t(), View::new(&b, 3, 4), 0.0, ViewMut::new(&mut c2, 2, 4));
        assert_eq!(c2, c);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = [1.0f64, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 2.0];
        let (y, _) = layer_norm(&x, &[1.0; 4], &[0.0; 4], 4);
        for row in y.chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    #[should_panic(expected = "exceeds buffer")]
    fn views_are_bounds_checked() {
        let a = [0.0f32; 5];
        let _ = View::new(&a, 2, 3);
    }
}

//! Scalar-generic kernels shared by the incremental decoder and the trainer.
//!
//! Inference instantiates them at `f32`; the gradient check runs the same
//! code at `f64`. Accumulation order is fixed so that the batch path and the
//! incremental path produce identical results for identical inputs.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

pub const RMS_EPS: f64 = 1e-5;
/// Short contexts only need a few slow rotations; a small base keeps the
/// rotating pairs distinguishable across a few hundred slots.
pub const ROPE_BASE: f64 = 100.0;

pub trait Real:
    Float + Sum + AddAssign + SubAssign + MulAssign + DivAssign + Debug + Send + Sync + 'static
{
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Raw strided `c = a·b + beta·c` kernel; see [`gemm`] for the checked
    /// entry point.
    ///
    /// # Safety
    /// Every index reached through the dimensions and strides must lie
    /// inside the corresponding slice.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        sa: (isize, isize),
        b: &[Self],
        sb: (isize, isize),
        beta: Self,
        c: &mut [Self],
        sc: (isize, isize),
    );
}

impl Real for f32 {
    fn lit(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        sa: (isize, isize),
        b: &[Self],
        sb: (isize, isize),
        beta: Self,
        c: &mut [Self],
        sc: (isize, isize),
    ) {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0,
            sa.1,
            b.as_ptr(),
            sb.0,
            sb.1,
            beta,
            c.as_mut_ptr(),
            sc.0,
            sc.1,
        )
    }
}

impl Real for f64 {
    fn lit(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        sa: (isize, isize),
        b: &[Self],
        sb: (isize, isize),
        beta: Self,
        c: &mut [Self],
        sc: (isize, isize),
    ) {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0,
            sa.1,
            b.as_ptr(),
            sb.0,
            sb.1,
            beta,
            c.as_mut_ptr(),
            sc.0,
            sc.1,
        )
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    // eight fixed lanes so the loop vectorizes with a deterministic order
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut acc = ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5]))
        + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Last index touched by an `rows × cols` walk with strides `st`, plus one.
fn extent(rows: usize, cols: usize, st: (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * st.0 as usize + (cols - 1) * st.1 as usize + 1
}

/// `c = a·b + beta·c` with `a` `m × k`, `b` `k × n`, `c` `m × n`, each given
/// as a slice plus (row, column) strides. Per-element accumulation order does
/// not depend on `m`, so single-row and batched products agree bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: (isize, isize),
    b: &[T],
    sb: (isize, isize),
    beta: T,
    c: &mut [T],
    sc: (isize, isize),
) {
    assert!(
        a.len() >= extent(m, k, sa) && b.len() >= extent(k, n, sb) && c.len() >= extent(m, n, sc)
    );
    // SAFETY: the assertion bounds every strided access.
    unsafe { T::gemm_raw(m, k, n, a, sa, b, sb, beta, c, sc) }
}

/// `out = x · w` for a row vector `x` (len `k`) and row-major `w` (`k × n`).
pub fn vec_mat<T: Real>(x: &[T], w: &[T], out: &mut [T]) {
    let (k, n) = (x.len(), out.len());
    debug_assert_eq!(w.len(), k * n);
    gemm(
        1,
        k,
        n,
        x,
        (k as isize, 1),
        w,
        (n as isize, 1),
        T::zero(),
        out,
        (n as isize, 1),
    );
}

/// `x · w` for a row-major `rows × k` matrix `x`.
pub fn mat_mat<T: Real>(x: &[T], k: usize, w: &[T], n: usize) -> Vec<T> {
    let rows = x.len() / k;
    let mut out = vec![T::zero(); rows * n];
    gemm(
        rows,
        k,
        n,
        x,
        (k as isize, 1),
        w,
        (n as isize, 1),
        T::zero(),
        &mut out,
        (n as isize, 1),
    );
    out
}

/// Backward of `y = x · w`: accumulates `dw += xᵀ dy` and returns `dx = dy wᵀ`.
pub fn mat_mat_backward<T: Real>(
    x: &[T],
    k: usize,
    w: &[T],
    n: usize,
    dy: &[T],
    dw: &mut [T],
) -> Vec<T> {
    let rows = x.len() / k;
    let (ki, ni) = (k as isize, n as isize);
    let mut dx = vec![T::zero(); rows * k];
    gemm(
        rows,
        n,
        k,
        dy,
        (ni, 1),
        w,
        (1, ni),
        T::zero(),
        &mut dx,
        (ki, 1),
    );
    gemm(k, rows, n, x, (1, ki), dy, (ni, 1), T::one(), dw, (ni, 1));
    dx
}

/// RMS normalization with a learned gain; returns the inverse RMS.
pub fn rms_norm<T: Real>(x: &[T], gain: &[T], out: &mut [T]) -> T {
    let n = T::lit(x.len() as f64);
    let ms = x.iter().map(|&v| v * v).sum::<T>() / n;
    let inv = T::one() / (ms + T::lit(RMS_EPS)).sqrt();
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = v * inv * g;
    }
    inv
}

/// Backward of [`rms_norm`] for one row; accumulates into `dgain`.
pub fn rms_norm_backward<T: Real>(
    x: &[T],
    gain: &[T],
    inv: T,
    dy: &[T],
    dgain: &mut [T],
    dx: &mut [T],
) {
    let n = T::lit(x.len() as f64);
    let mut proj = T::zero();
    for i in 0..x.len() {
        let normed = x[i] * inv;
        dgain[i] += dy[i] * normed;
        proj += dy[i] * gain[i] * normed;
    }
    proj /= n;
    for i in 0..x.len() {
        let normed = x[i] * inv;
        dx[i] += inv * (dy[i] * gain[i] - normed * proj);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu<T: Real>(u: T) -> T {
    let inner = T::lit(GELU_C) * (u + T::lit(GELU_A) * u * u * u);
    T::lit(0.5) * u * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Real>(u: T) -> T {
    let inner = T::lit(GELU_C) * (u + T::lit(GELU_A) * u * u * u);
    let t = inner.tanh();
    let dinner = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_A) * u * u);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * u * (T::one() - t * t) * dinner
}

/// Number of leading dimension pairs per head that are rotated. The other
/// half of each head carries no positional signal, which lets content
/// matching reach past the trained length.
pub fn rotary_pairs(head_dim: usize) -> usize {
    (head_dim / 4).max(1)
}

/// Per-pair rotation angles for one position; unrotated pairs get the
/// identity `(1, 0)`.
pub fn rope_angles<T: Real>(position: usize, head_dim: usize) -> Vec<(T, T)> {
    let rot = rotary_pairs(head_dim);
    (0..head_dim / 2)
        .map(|i| {
            if i >= rot {
                return (T::one(), T::zero());
            }
            let freq = ROPE_BASE.powf(-(i as f64) / rot as f64);
            let angle = position as f64 * freq;
            (T::lit(angle.cos()), T::lit(angle.sin()))
        })
        .collect()
}

/// Rotates every head of `v` (`n_heads × head_dim`) in place.
pub fn rope_apply<T: Real>(v: &mut [T], head_dim: usize, angles: &[(T, T)]) {
    for head in v.chunks_exact_mut(head_dim) {
        for (pair, &(c, s)) in head.chunks_exact_mut(2).zip(angles) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = a * c - b * s;
            pair[1] = a * s + b * c;
        }
    }
}

/// Transpose rotation, used to push gradients back through [`rope_apply`].
pub fn rope_apply_inverse<T: Real>(v: &mut [T], head_dim: usize, angles: &[(T, T)]) {
    for head in v.chunks_exact_mut(head_dim) {
        for (pair, &(c, s)) in head.chunks_exact_mut(2).zip(angles) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = a * c + b * s;
            pair[1] = -a * s + b * c;
        }
    }
}

/// Numerically stable softmax in place.
pub fn softmax_in_place<T: Real>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Log-softmax evaluated in `f64` regardless of the logit precision.
pub fn log_softmax_f64<T: Real>(logits: &[T]) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|x| x.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = logits
        .iter()
        .map(|x| (x.as_f64() - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    logits.iter().map(|x| x.as_f64() - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rope_inverse_undoes_rotation() {
        let mut v: Vec<f64> = (0..16).map(|i| i as f64 * 0.37 - 2.0).collect();
        let orig = v.clone();
        let ang = rope_angles::<f64>(17, 8);
        rope_apply(&mut v, 8, &ang);
        assert!(v.iter().zip(&orig).any(|(a, b)| (a - b).abs() > 1e-3));
        rope_apply_inverse(&mut v, 8, &ang);
        for (a, b) in v.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rope_scores_depend_on_relative_offset() {
        let q: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let k: Vec<f64> = (0..8).map(|i| (i as f64 * 1.3).cos()).collect();
        let score = |qp: usize, kp: usize| {
            let (mut a, mut b) = (q.clone(), k.clone());
            rope_apply(&mut a, 8, &rope_angles(qp, 8));
            rope_apply(&mut b, 8, &rope_angles(kp, 8));
            dot(&a, &b)
        };
        assert!((score(9, 4) - score(25, 20)).abs() < 1e-9);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &u in &[-3.0f64, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((fd - gelu_grad(u)).abs() < 1e-8, "u={u}");
        }
    }

    #[test]
    fn log_softmax_normalizes() {
        let lp = log_softmax_f64(&[1.0f32, 2.0, 3.0, -4.0]);
        let total: f64 = lp.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

//! Plain slice kernels behind the graph ops.
//!
//! Every kernel computes each output row with a fixed reduction order, so
//! results do not depend on the rayon thread count or on how samples are
//! grouped into batches.

use rayon::prelude::*;

use crate::tensor::Scalar;

/// Work size (multiply-adds) above which matmul kernels fan out over rows.
const PAR_THRESHOLD: usize = 1 << 15;

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `y[n, :] = x[n, :] · w + b` with `w` stored `[fin, fout]`.
pub fn matmul_bias<T: Scalar>(x: &[T], fin: usize, w: &[T], fout: usize, b: &[T]) -> Vec<T> {
    let rows = x.len() / fin;
    let mut y = vec![T::zero(); rows * fout];
    let row = |(yr, xr): (&mut [T], &[T])| {
        yr.copy_from_slice(b);
        for (i, &xi) in xr.iter().enumerate() {
            if xi != T::zero() {
                axpy(xi, &w[i * fout..(i + 1) * fout], yr);
            }
        }
    };
    if rows * fin * fout >= PAR_THRESHOLD {
        y.par_chunks_mut(fout).zip(x.par_chunks(fin)).for_each(row);
    } else {
        y.chunks_mut(fout).zip(x.chunks(fin)).for_each(row);
    }
    y
}

/// Gradients of [`matmul_bias`]: returns `(dx, dw, db)`.
pub fn matmul_bias_backward<T: Scalar>(
    x: &[T],
    fin: usize,
    w: &[T],
    fout: usize,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / fin;
    let parallel = rows * fin * fout >= PAR_THRESHOLD;

    let mut dx = vec![T::zero(); rows * fin];
    let dx_row = |(dxr, dyr): (&mut [T], &[T])| {
        for (i, d) in dxr.iter_mut().enumerate() {
            *d = dot(dyr, &w[i * fout..(i + 1) * fout]);
        }
    };
    if parallel {
        dx.par_chunks_mut(fin).zip(dy.par_chunks(fout)).for_each(dx_row);
    } else {
        dx.chunks_mut(fin).zip(dy.chunks(fout)).for_each(dx_row);
    }

    let mut xt = vec![T::zero(); rows * fin];
    for r in 0..rows {
        for i in 0..fin {
            xt[i * rows + r] = x[r * fin + i];
        }
    }
    let mut dw = vec![T::zero(); fin * fout];
    let dw_row = |(i, dwr): (usize, &mut [T])| {
        let col = &xt[i * rows..(i + 1) * rows];
        for (r, &a) in col.iter().enumerate() {
            if a != T::zero() {
                axpy(a, &dy[r * fout..(r + 1) * fout], dwr);
            }
        }
    };
    if parallel {
        dw.par_chunks_mut(fout).enumerate().for_each(dw_row);
    } else {
        dw.chunks_mut(fout).enumerate().for_each(dw_row);
    }

    let mut db = vec![T::zero(); fout];
    for dyr in dy.chunks(fout) {
        for (d, &g) in db.iter_mut().zip(dyr) {
            *d += g;
        }
    }
    (dx, dw, db)
}

/// Normalizes each contiguous row of length `f`. Returns `(y, xhat, inv_std)`.
pub fn layer_norm<T: Scalar>(x: &[T], f: usize, gamma: &[T], beta: &[T], eps: T) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / f;
    let n = T::of(f as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * f..(r + 1) * f];
        let mean = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + eps).sqrt();
        inv_std[r] = inv;
        for j in 0..f {
            let h = (xr[j] - mean) * inv;
            xhat[r * f + j] = h;
            y[r * f + j] = h * gamma[j] + beta[j];
        }
    }
    (y, xhat, inv_std)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Scalar>(
    xhat: &[T],
    inv_std: &[T],
    f: usize,
    gamma: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = xhat.len() / f;
    let n = T::of(f as f64);
    let mut dx = vec![T::zero(); xhat.len()];
    let mut dgamma = vec![T::zero(); f];
    let mut dbeta = vec![T::zero(); f];
    let mut dxhat = vec![T::zero(); f];
    for r in 0..rows {
        let hr = &xhat[r * f..(r + 1) * f];
        let gr = &dy[r * f..(r + 1) * f];
        let mut sum_d = T::zero();
        let mut sum_dh = T::zero();
        for j in 0..f {
            dgamma[j] += gr[j] * hr[j];
            dbeta[j] += gr[j];
            dxhat[j] = gr[j] * gamma[j];
            sum_d += dxhat[j];
            sum_dh += dxhat[j] * hr[j];
        }
        let scale = inv_std[r] / n;
        for j in 0..f {
            dx[r * f + j] = scale * (n * dxhat[j] - sum_d - hr[j] * sum_dh);
        }
    }
    (dx, dgamma, dbeta)
}

#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// d/dx of exact GELU: Φ(x) + x·φ(x).
#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

/// Depthwise kernel-3 convolution over the last axis of `[B, D, L]`, zero
/// padding 1 on each side.
pub fn depthwise_conv3<T: Scalar>(x: &[T], d: usize, l: usize, k: &[T], bias: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for (row_idx, (yr, xr)) in y.chunks_mut(l).zip(x.chunks(l)).enumerate() {
        let c = row_idx % d;
        let kc = &k[c * 3..c * 3 + 3];
        for (t, out) in yr.iter_mut().enumerate() {
            let mut acc = bias[c];
            for (j, &kj) in kc.iter().enumerate() {
                let src = t as isize + j as isize - 1;
                if src >= 0 && (src as usize) < l {
                    acc += xr[src as usize] * kj;
                }
            }
            *out = acc;
        }
    }
    y
}

/// Returns `(dx, dk, dbias)`.
pub fn depthwise_conv3_backward<T: Scalar>(
    x: &[T],
    d: usize,
    l: usize,
    k: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); d * 3];
    let mut db = vec![T::zero(); d];
    for (row_idx, ((dxr, xr), gr)) in dx.chunks_mut(l).zip(x.chunks(l)).zip(dy.chunks(l)).enumerate() {
        let c = row_idx % d;
        for (t, &g) in gr.iter().enumerate() {
            db[c] += g;
            for j in 0..3 {
                let src = t as isize + j as isize - 1;
                if src >= 0 && (src as usize) < l {
                    let s = src as usize;
                    dk[c * 3 + j] += g * xr[s];
                    dxr[s] += g * k[c * 3 + j];
                }
            }
        }
    }
    (dx, dk, db)
}

/// Segment `[start, end)` averaged into output position `i` of adaptive
/// pooling from length `t` to `out`.
#[inline]
pub fn pool_segment(i: usize, t: usize, out: usize) -> (usize, usize) {
    let start = (i * t) / out;
    let end = ((i + 1) * t).div_ceil(out);
    (start, end)
}

/// Adaptive average pooling along axis 1 of `[B, T, D]`.
pub fn adaptive_pool<T: Scalar>(x: &[T], b: usize, t: usize, d: usize, out: usize) -> Vec<T> {
    let mut y = vec![T::zero(); b * out * d];
    for bi in 0..b {
        for i in 0..out {
            let (s, e) = pool_segment(i, t, out);
            let inv = T::one() / T::of((e - s) as f64);
            let yr = &mut y[(bi * out + i) * d..(bi * out + i + 1) * d];
            for ti in s..e {
                let xr = &x[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                for (a, &v) in yr.iter_mut().zip(xr) {
                    *a += v;
                }
            }
            yr.iter_mut().for_each(|a| *a *= inv);
        }
    }
    y
}

pub fn adaptive_pool_backward<T: Scalar>(dy: &[T], b: usize, t: usize, d: usize, out: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); b * t * d];
    for bi in 0..b {
        for i in 0..out {
            let (s, e) = pool_segment(i, t, out);
            let inv = T::one() / T::of((e - s) as f64);
            let gr = &dy[(bi * out + i) * d..(bi * out + i + 1) * d];
            for ti in s..e {
                let dxr = &mut dx[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                for (a, &g) in dxr.iter_mut().zip(gr) {
                    *a += g * inv;
                }
            }
        }
    }
    dx
}

/// `[B, P, Q] -> [B, Q, P]`.
pub fn transpose_last_two<T: Scalar>(x: &[T], b: usize, p: usize, q: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for bi in 0..b {
        let off = bi * p * q;
        for i in 0..p {
            for j in 0..q {
                y[off + j * p + i] = x[off + i * q + j];
            }
        }
    }
    y
}

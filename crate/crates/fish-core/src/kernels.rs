//! Raw numeric kernels.
//!
//! Both execution paths — the tape ops used for parallel training and the
//! per-step streaming functions — call into these. Accumulation orders are
//! fixed (k-ascending everywhere) so that a streaming matvec reproduces the
//! corresponding matmul row bit for bit.

// Resolves f64 math in no_std builds; std builds use inherent methods.
#[allow(unused_imports)]
use num_traits::Float;
use crate::scalar::{real, Real};

/// gelu tanh-approximation constants, fixed for cross-platform reproducibility.
pub const GELU_C1: f64 = 0.7978845608;
pub const GELU_C2: f64 = 0.044715;

// ---------------------------------------------------------------------------
// matmul family
// ---------------------------------------------------------------------------

/// C += A[m,k] @ B[k,n], row-major, ikj order.
pub fn matmul_acc<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c = *c + aip * bv;
            }
        }
    }
}

/// C += A[m,k] @ B^T where B is [n,k] (dot of contiguous rows).
pub fn matmul_nt_acc<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = out[i * n + j] + dot(arow, brow);
        }
    }
}

/// C += A^T @ B where A is [m,k] and B is [m,n]; C is [k,n].
pub fn matmul_tn_acc<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let crow = &mut out[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c = *c + aip * bv;
            }
        }
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// y += alpha * x.
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + alpha * xv;
    }
}

// ---------------------------------------------------------------------------
// 1-D convolution (cross-correlation convention, zero padding)
// ---------------------------------------------------------------------------

/// Output length of a conv with the given geometry, if positive.
pub fn conv_out_len(l: usize, k: usize, stride: usize, pad_left: usize, pad_right: usize) -> Option<usize> {
    let padded = l + pad_left + pad_right;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// out[co, u] = bias[co] + sum_{ci,t} w[co,ci,t] * x[ci, u*stride - pad_left + t].
#[allow(clippy::too_many_arguments)]
pub fn conv1d<T: Real>(
    x: &[T],
    cin: usize,
    l: usize,
    w: &[T],
    cout: usize,
    k: usize,
    bias: Option<&[T]>,
    stride: usize,
    pad_left: usize,
    l_out: usize,
    out: &mut [T],
) {
    debug_assert_eq!(x.len(), cin * l);
    debug_assert_eq!(w.len(), cout * cin * k);
    debug_assert_eq!(out.len(), cout * l_out);
    for co in 0..cout {
        let wc = &w[co * cin * k..(co + 1) * cin * k];
        let b = bias.map_or(T::zero(), |b| b[co]);
        for u in 0..l_out {
            let start = (u * stride) as isize - pad_left as isize;
            let mut acc = b;
            if start >= 0 && start as usize + k <= l {
                let s = start as usize;
                for ci in 0..cin {
                    acc = acc + dot(&wc[ci * k..(ci + 1) * k], &x[ci * l + s..ci * l + s + k]);
                }
            } else {
                // Padded edge: accumulate a per-channel partial first so the
                // summation order matches the interior dot exactly.
                for ci in 0..cin {
                    let wrow = &wc[ci * k..(ci + 1) * k];
                    let xrow = &x[ci * l..(ci + 1) * l];
                    let mut tmp = T::zero();
                    for (t, &wv) in wrow.iter().enumerate() {
                        let idx = start + t as isize;
                        let xv = if idx >= 0 && (idx as usize) < l {
                            xrow[idx as usize]
                        } else {
                            T::zero()
                        };
                        tmp = tmp + wv * xv;
                    }
                    acc = acc + tmp;
                }
            }
            out[co * l_out + u] = acc;
        }
    }
}

/// Accumulate conv1d input/weight/bias gradients.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<T: Real>(
    x: &[T],
    cin: usize,
    l: usize,
    w: &[T],
    cout: usize,
    k: usize,
    stride: usize,
    pad_left: usize,
    l_out: usize,
    dout: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    if let Some(db) = db {
        for co in 0..cout {
            let mut s = T::zero();
            for u in 0..l_out {
                s = s + dout[co * l_out + u];
            }
            db[co] = db[co] + s;
        }
    }
    if let Some(dw) = dw {
        for co in 0..cout {
            for u in 0..l_out {
                let g = dout[co * l_out + u];
                let start = (u * stride) as isize - pad_left as isize;
                for ci in 0..cin {
                    let xrow = &x[ci * l..(ci + 1) * l];
                    for t in 0..k {
                        let idx = start + t as isize;
                        if idx >= 0 && (idx as usize) < l {
                            let e = (co * cin + ci) * k + t;
                            dw[e] = dw[e] + g * xrow[idx as usize];
                        }
                    }
                }
            }
        }
    }
    if let Some(dx) = dx {
        for co in 0..cout {
            let wc = &w[co * cin * k..(co + 1) * cin * k];
            for u in 0..l_out {
                let g = dout[co * l_out + u];
                let start = (u * stride) as isize - pad_left as isize;
                for ci in 0..cin {
                    let wrow = &wc[ci * k..(ci + 1) * k];
                    for (t, &wv) in wrow.iter().enumerate() {
                        let idx = start + t as isize;
                        if idx >= 0 && (idx as usize) < l {
                            let e = ci * l + idx as usize;
                            dx[e] = dx[e] + g * wv;
                        }
                    }
                }
            }
        }
    }
}

/// Frame-mean pooling: out[ci, u] = mean of x[ci, u*stride .. u*stride+stride].
pub fn frame_mean<T: Real>(x: &[T], cin: usize, l: usize, stride: usize, l_out: usize, out: &mut [T]) {
    let inv = T::one() / real::<T>(stride as f64);
    for ci in 0..cin {
        let xrow = &x[ci * l..(ci + 1) * l];
        for u in 0..l_out {
            let mut acc = T::zero();
            for t in 0..stride {
                acc = acc + xrow[u * stride + t];
            }
            out[ci * l_out + u] = acc * inv;
        }
    }
}

// ---------------------------------------------------------------------------
// Pointwise activations
// ---------------------------------------------------------------------------

#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let c1 = real::<T>(GELU_C1);
    let c2 = real::<T>(GELU_C2);
    let half = real::<T>(0.5);
    let inner = c1 * (x + c2 * x * x * x);
    half * x * (T::one() + inner.tanh())
}

#[inline]
pub fn dgelu<T: Real>(x: T) -> T {
    let c1 = real::<T>(GELU_C1);
    let c2 = real::<T>(GELU_C2);
    let half = real::<T>(0.5);
    let three = real::<T>(3.0);
    let inner = c1 * (x + c2 * x * x * x);
    let t = inner.tanh();
    let sech2 = T::one() - t * t;
    let dinner = c1 * (T::one() + three * c2 * x * x);
    half * (T::one() + t) + half * x * sech2 * dinner
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// y = gain * x / sqrt(mean(x^2) + eps), over one row.
pub fn rmsnorm_row<T: Real>(x: &[T], gain: &[T], eps: T, out: &mut [T]) {
    let d = real::<T>(x.len() as f64);
    let ms = x.iter().fold(T::zero(), |a, &v| a + v * v) / d;
    let inv = T::one() / (ms + eps).sqrt();
    for ((o, &xv), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = g * xv * inv;
    }
}

/// Accumulate rmsnorm input/gain gradients for one row.
pub fn rmsnorm_backward_row<T: Real>(
    x: &[T],
    gain: &[T],
    eps: T,
    dy: &[T],
    dx: &mut [T],
    dgain: &mut [T],
) {
    let n = x.len();
    let d = real::<T>(n as f64);
    let ms = x.iter().fold(T::zero(), |a, &v| a + v * v) / d;
    let inv = T::one() / (ms + eps).sqrt();
    let inv3 = inv * inv * inv;
    let mut dotv = T::zero();
    for i in 0..n {
        dotv = dotv + dy[i] * gain[i] * x[i];
    }
    for i in 0..n {
        dx[i] = dx[i] + inv * gain[i] * dy[i] - x[i] * inv3 / d * dotv;
        dgain[i] = dgain[i] + dy[i] * x[i] * inv;
    }
}

/// y = (x - mean)/sqrt(var + eps) * gain + bias, over one row.
pub fn layernorm_row<T: Real>(x: &[T], gain: &[T], bias: &[T], eps: T, out: &mut [T]) {
    let d = real::<T>(x.len() as f64);
    let mean = x.iter().fold(T::zero(), |a, &v| a + v) / d;
    let var = x
        .iter()
        .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
        / d;
    let inv = T::one() / (var + eps).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
    }
}

/// Accumulate layernorm input/gain/bias gradients for one row.
#[allow(clippy::too_many_arguments)]
pub fn layernorm_backward_row<T: Real>(
    x: &[T],
    gain: &[T],
    eps: T,
    dy: &[T],
    dx: &mut [T],
    dgain: &mut [T],
    dbias: &mut [T],
) {
    let n = x.len();
    let d = real::<T>(n as f64);
    let mean = x.iter().fold(T::zero(), |a, &v| a + v) / d;
    let var = x
        .iter()
        .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
        / d;
    let inv = T::one() / (var + eps).sqrt();
    let mut sum_dxhat = T::zero();
    let mut sum_dxhat_xhat = T::zero();
    for i in 0..n {
        let xhat = (x[i] - mean) * inv;
        let dxhat = dy[i] * gain[i];
        sum_dxhat = sum_dxhat + dxhat;
        sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
        dgain[i] = dgain[i] + dy[i] * xhat;
        dbias[i] = dbias[i] + dy[i];
    }
    for i in 0..n {
        let xhat = (x[i] - mean) * inv;
        let dxhat = dy[i] * gain[i];
        dx[i] = dx[i] + inv / d * (d * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
    }
}

// ---------------------------------------------------------------------------
// Rotary position embedding
// ---------------------------------------------------------------------------

/// Rotate adjacent feature pairs of one head slice by position * theta_j.
/// Angles are always computed in f64 so both execution modes agree exactly.
pub fn rope_rotate<T: Real>(x: &mut [T], position: u64, base: f64, inverse: bool) {
    let d = x.len();
    debug_assert!(d % 2 == 0, "rope needs even head dim");
    let half = d / 2;
    for j in 0..half {
        let theta = base.powf(-2.0 * j as f64 / d as f64);
        let ang = position as f64 * theta;
        let (sin, cos) = ang.sin_cos();
        let (sin, cos) = (real::<T>(sin), real::<T>(cos));
        let sin = if inverse { -sin } else { sin };
        let (a, b) = (x[2 * j], x[2 * j + 1]);
        x[2 * j] = a * cos - b * sin;
        x[2 * j + 1] = a * sin + b * cos;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_anchors() {
        // gelu(0) = 0; large arguments approach identity.
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(10.0f64) - 10.0).abs() < 1e-3);
        assert!((gelu(-10.0f64)).abs() < 1e-3);
    }

    #[test]
    fn matmul_identity() {
        let i2 = [1.0f64, 0.0, 0.0, 1.0];
        let b = [1.0f64, 2.0, 3.0, 4.0];
        let mut out = [0.0f64; 4];
        matmul_acc(&i2, &b, 2, 2, 2, &mut out);
        assert_eq!(out, b);
    }

    #[test]
    fn rope_preserves_norm() {
        let mut x = [0.3f64, -1.2, 0.7, 2.0, -0.5, 0.1];
        let n0: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        rope_rotate(&mut x, 12345, 10000.0, false);
        let n1: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n0 - n1).abs() < 1e-12);
    }
}

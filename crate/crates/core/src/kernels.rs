//! Raw slice kernels behind the autodiff ops. Shapes are validated by the callers.

use crate::scalar::Scalar;

/// `c[m×n] = a[m×k] · b[k×n]`
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == T::zero() {
                continue;
            }
            let brow = &b[t * n..(t + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output axis `i` is input axis `perm[i]`.
pub fn permute<T: Scalar>(a: &[T], shape: &[usize], perm: &[usize]) -> (Vec<T>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(a.len());
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..a.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(a[off]);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

/// Splits `shape` around `axis` into (outer, len, inner) block counts.
pub fn axis_blocks(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numerically stable softmax over contiguous rows of length `n`.
pub fn softmax_rows<T: Scalar>(x: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (row, o) in x.chunks(n).zip(out.chunks_mut(n)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (ov, &v) in o.iter_mut().zip(row) {
            *ov = (v - max).exp();
            total += *ov;
        }
        for ov in o.iter_mut() {
            *ov /= total;
        }
    }
    out
}

pub fn log_softmax_rows<T: Scalar>(x: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (row, o) in x.chunks(n).zip(out.chunks_mut(n)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for (ov, &v) in o.iter_mut().zip(row) {
            *ov = v - lse;
        }
    }
    out
}

/// Normalizes each contiguous row of length `n` to mean 0, variance 1.
/// Returns the normalized values and the per-row reciprocal std.
pub fn layernorm_rows<T: Scalar>(x: &[T], n: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let nt = T::lit(n as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(x.len() / n);
    for (row, o) in x.chunks(n).zip(out.chunks_mut(n)) {
        let mean = row.iter().copied().sum::<T>() / nt;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
        let r = T::one() / (var + eps).sqrt();
        for (ov, &v) in o.iter_mut().zip(row) {
            *ov = (v - mean) * r;
        }
        rstd.push(r);
    }
    (out, rstd)
}

/// Input gradient of `layernorm_rows` given its output `y`, reciprocal std and upstream `g`.
pub fn layernorm_rows_backward<T: Scalar>(y: &[T], rstd: &[T], g: &[T], n: usize) -> Vec<T> {
    let nt = T::lit(n as f64);
    let mut out = vec![T::zero(); y.len()];
    for (r, ((yr, gr), o)) in rstd
        .iter()
        .zip(y.chunks(n).zip(g.chunks(n)).zip(out.chunks_mut(n)))
    {
        let mean_g = gr.iter().copied().sum::<T>() / nt;
        let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / nt;
        for ((ov, &gv), &yv) in o.iter_mut().zip(gr).zip(yr) {
            *ov = *r * (gv - mean_g - yv * mean_gy);
        }
    }
    out
}

const GELU_C: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Tanh approximation: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
pub fn gelu<T: Scalar>(x: T) -> T {
    let u = T::lit(SQRT_2_OVER_PI) * (x + T::lit(GELU_C) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::lit(SQRT_2_OVER_PI);
    let c = T::lit(GELU_C);
    let u = k * (x + c * x * x * x);
    let t = u.tanh();
    let du = k * (T::one() + T::lit(3.0) * c * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
}

pub fn gelu_grad2<T: Scalar>(x: T) -> T {
    let k = T::lit(SQRT_2_OVER_PI);
    let c = T::lit(GELU_C);
    let u = k * (x + c * x * x * x);
    let t = u.tanh();
    let s = T::one() - t * t;
    let du = k * (T::one() + T::lit(3.0) * c * x * x);
    let ddu = k * T::lit(6.0) * c * x;
    s * du + T::lit(0.5) * x * (ddu * s - T::lit(2.0) * t * s * du * du)
}

/// Geometry of a 2-D convolution `x[B×C×H×W] ⋆ w[O×C×KH×KW] → y[B×O×OH×OW]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Range of output columns `ox` whose tap `kj` lands inside the input row.
    #[inline]
    fn ox_range(&self, kj: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kj as isize - self.pad as isize;
        // ix = ox*s + off must satisfy 0 <= ix < w
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = (self.w as isize - 1 - off).div_euclid(s) + 1;
        let hi = hi.clamp(0, self.ow as isize);
        (lo.min(hi) as usize, hi as usize)
    }

    #[inline]
    fn input_row(&self, oy: usize, ki: usize) -> Option<usize> {
        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }

    pub fn macs(&self) -> u64 {
        (self.batch * self.out_ch * self.oh * self.ow * self.in_ch * self.kh * self.kw) as u64
    }
}

/// Unfolds one sample `x[C×H×W]` into columns `[C·KH·KW × OH·OW]`; out-of-range taps are zero.
fn im2col<T: Scalar>(xs: &[T], g: &ConvGeom) -> Vec<T> {
    let plane_out = g.oh * g.ow;
    let mut cols = vec![T::zero(); g.in_ch * g.kh * g.kw * plane_out];
    for c in 0..g.in_ch {
        let xp = &xs[c * g.h * g.w..][..g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &mut cols[((c * g.kh + ki) * g.kw + kj) * plane_out..][..plane_out];
                let (lo, hi) = g.ox_range(kj);
                if lo == hi {
                    continue;
                }
                for oy in 0..g.oh {
                    let Some(iy) = g.input_row(oy, ki) else { continue };
                    let xrow = &xp[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut row[oy * g.ow + lo..oy * g.ow + hi];
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        dst.copy_from_slice(&xrow[first..first + dst.len()]);
                    } else {
                        for (d, &v) in dst.iter_mut().zip(xrow[first..].iter().step_by(g.stride)) {
                            *d = v;
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates columns back into `gx[C×H×W]`.
fn col2im<T: Scalar>(cols: &[T], gx: &mut [T], g: &ConvGeom) {
    let plane_out = g.oh * g.ow;
    for c in 0..g.in_ch {
        let xp = &mut gx[c * g.h * g.w..][..g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &cols[((c * g.kh + ki) * g.kw + kj) * plane_out..][..plane_out];
                let (lo, hi) = g.ox_range(kj);
                if lo == hi {
                    continue;
                }
                for oy in 0..g.oh {
                    let Some(iy) = g.input_row(oy, ki) else { continue };
                    let xrow = &mut xp[iy * g.w..(iy + 1) * g.w];
                    let src = &row[oy * g.ow + lo..oy * g.ow + hi];
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        for (d, &v) in xrow[first..first + src.len()].iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in xrow[first..].iter_mut().step_by(g.stride).zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

fn taps(g: &ConvGeom) -> usize {
    g.in_ch * g.kh * g.kw
}

pub fn conv2d<T: Scalar>(x: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let (plane_in, plane_out) = (g.in_ch * g.h * g.w, g.out_ch * g.oh * g.ow);
    let mut y = Vec::with_capacity(g.batch * plane_out);
    for b in 0..g.batch {
        let cols = im2col(&x[b * plane_in..][..plane_in], g);
        y.extend(matmul(w, &cols, g.out_ch, taps(g), g.oh * g.ow));
    }
    y
}

/// Adjoint of [`conv2d`] in its input: maps `gy[B×O×OH×OW]` to `gx[B×C×H×W]`.
pub fn conv2d_input_grad<T: Scalar>(gy: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let (plane_in, plane_out) = (g.in_ch * g.h * g.w, g.out_ch * g.oh * g.ow);
    let mut gx = vec![T::zero(); g.batch * plane_in];
    let wt = transpose(w, g.out_ch, taps(g));
    for b in 0..g.batch {
        let cols = matmul(&wt, &gy[b * plane_out..][..plane_out], taps(g), g.out_ch, g.oh * g.ow);
        col2im(&cols, &mut gx[b * plane_in..][..plane_in], g);
    }
    gx
}

/// Gradient of [`conv2d`] in its weight: `gw[O×C×KH×KW]` from input `x` and `gy`.
pub fn conv2d_weight_grad<T: Scalar>(x: &[T], gy: &[T], g: &ConvGeom) -> Vec<T> {
    let (plane_in, plane_out) = (g.in_ch * g.h * g.w, g.out_ch * g.oh * g.ow);
    let mut gw = vec![T::zero(); g.out_ch * taps(g)];
    for b in 0..g.batch {
        let cols_t = transpose(&im2col(&x[b * plane_in..][..plane_in], g), taps(g), g.oh * g.ow);
        let part = matmul(&gy[b * plane_out..][..plane_out], &cols_t, g.out_ch, g.oh * g.ow, taps(g));
        for (a, p) in gw.iter_mut().zip(part) {
            *a += p;
        }
    }
    gw
}

//! Separable Gaussian blur with mirrored borders.

use psl_core::{Error, Result, Scalar, Tensor};

/// Standard deviation used for an odd kernel size `k`:
/// `0.3·((k − 1)/2 − 1) + 0.8`.
pub fn blur_sigma(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

/// Normalized 1-D Gaussian weights of odd length `k`.
pub fn blur_kernel(k: usize) -> Result<Vec<f64>> {
    if k % 2 == 0 {
        return Err(Error::contract(format!("blur kernel size must be odd, got {k}")));
    }
    let sigma = blur_sigma(k);
    let r = (k / 2) as f64;
    let raw: Vec<f64> = (0..k)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Mirrors an out-of-range index back into `0..n` without repeating the edge sample
/// (`… 2 1 | 0 1 2 … n−1 | n−2 …`), folding as many times as needed.
fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let j = i.rem_euclid(period);
    (if j < n as isize { j } else { period - j }) as usize
}

/// Blurs a `[C×H×W]` frame with a `k×k` Gaussian. `k = 0` returns the input
/// untouched; even `k > 0` is rejected.
pub fn gaussian_blur<T: Scalar>(frame: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let s = frame.shape();
    if s.len() != 3 {
        return Err(Error::dim(format!("gaussian_blur expects a C×H×W frame, got {s:?}")));
    }
    if k == 0 {
        return Ok(frame.clone());
    }
    let weights = blur_kernel(k)?;
    let (c, h, w) = (s[0], s[1], s[2]);
    let r = (k / 2) as isize;
    let src: Vec<f64> = frame.data().iter().map(|v| v.as_f64()).collect();
    let mut rows = vec![0.0; src.len()];
    for plane in 0..c {
        let base = plane * h * w;
        for y in 0..h {
            for x in 0..w {
                rows[base + y * w + x] = weights
                    .iter()
                    .enumerate()
                    .map(|(t, wt)| wt * src[base + y * w + mirror(x as isize + t as isize - r, w)])
                    .sum();
            }
        }
    }
    let mut out = vec![T::zero(); src.len()];
    for plane in 0..c {
        let base = plane * h * w;
        for y in 0..h {
            for x in 0..w {
                let v: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(t, wt)| wt * rows[base + mirror(y as isize + t as isize - r, h) * w + x])
                    .sum();
                out[base + y * w + x] = T::lit(v);
            }
        }
    }
    Tensor::new(s.to_vec(), out)
}

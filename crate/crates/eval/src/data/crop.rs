//! Face-box cropping with bilinear resampling.

use psl_core::{Error, Result, Scalar, Tensor};
use serde::{Deserialize, Serialize};

/// Axis-aligned box in source pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub fn full(width: usize, height: usize) -> Self {
        Self { x: 0, y: 0, w: width, h: height }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= width && self.y + self.h <= height
    }
}

/// Source coordinate sampled by output index `i` when `n_in` samples are stretched
/// over `n_out`, with pixel centres at half-integers.
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    let c = (i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
    c.clamp(0.0, (n_in - 1) as f64)
}

/// Bilinear resize of a `[C×H×W]` frame to `[C×out_h×out_w]`. Equal sizes copy
/// the input exactly.
pub fn resize_bilinear<T: Scalar>(frame: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = frame.shape();
    if s.len() != 3 || out_h == 0 || out_w == 0 {
        return Err(Error::dim(format!("cannot resize frame {s:?} to {out_h}×{out_w}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if (h, w) == (out_h, out_w) {
        return Ok(frame.clone());
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                let x = source_coord(i, n_in, n_out);
                let lo = x.floor() as usize;
                (lo, (lo + 1).min(n_in - 1), x - lo as f64)
            })
            .collect()
    };
    let (ys, xs) = (taps(h, out_h), taps(w, out_w));
    let d = frame.data();
    let at = |p: usize, y: usize, x: usize| d[p * h * w + y * w + x].as_f64();
    // `a + t·(b − a)` keeps constant regions exactly constant.
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    Ok(Tensor::from_fn(&[c, out_h, out_w], |i| {
        let (p, r) = (i / (out_h * out_w), i % (out_h * out_w));
        let (y0, y1, ty) = ys[r / out_w];
        let (x0, x1, tx) = xs[r % out_w];
        let top = lerp(at(p, y0, x0), at(p, y0, x1), tx);
        let bottom = lerp(at(p, y1, x0), at(p, y1, x1), tx);
        T::lit(lerp(top, bottom, ty))
    }))
}

/// Crops `bbox` out of a `[3×H×W]` frame and resizes it to `out_size × out_size`.
/// The same box is applied to an RGB frame and its thermal partner.
pub fn apply_crop<T: Scalar>(frame: &Tensor<T>, bbox: BBox, out_size: usize) -> Result<Tensor<T>> {
    let s = frame.shape();
    if s.len() != 3 {
        return Err(Error::dim(format!("apply_crop expects a C×H×W frame, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if !bbox.fits(w, h) {
        return Err(Error::contract(format!("box {bbox:?} does not fit inside a {w}×{h} frame")));
    }
    let d = frame.data();
    let cropped = Tensor::from_fn(&[c, bbox.h, bbox.w], |i| {
        let (p, r) = (i / (bbox.h * bbox.w), i % (bbox.h * bbox.w));
        d[p * h * w + (bbox.y + r / bbox.w) * w + bbox.x + r % bbox.w]
    });
    resize_bilinear(&cropped, out_size, out_size)
}

//! Binary PPM (P6, maxval 255) frames, stored channels-first in `[−1, 1]`.

use std::fs;
use std::path::Path;

use psl_core::{Error, Result, Scalar, Tensor};

/// An 8-bit RGB image, interleaved row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    /// Channels-first tensor with `v/127.5 − 1` scaling.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (w, h) = (self.width, self.height);
        Tensor::from_fn(&[3, h, w], |i| {
            let (c, p) = (i / (h * w), i % (h * w));
            T::lit(self.pixels[p * 3 + c] as f64 / 127.5 - 1.0)
        })
    }

    /// Inverse of [`to_tensor`](Self::to_tensor), rounding to the nearest level and
    /// clamping to `[0, 255]`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::dim(format!("expected a 3×H×W frame, got {s:?}")));
        }
        let (h, w) = (s[1], s[2]);
        let mut pixels = vec![0u8; 3 * h * w];
        for (i, v) in t.data().iter().enumerate() {
            let (c, p) = (i / (h * w), i % (h * w));
            pixels[p * 3 + c] = ((v.as_f64() + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
        }
        Ok(Self { width: w, height: h, pixels })
    }
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Parses a P6 file. Errors carry the byte offset at which parsing failed.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let fail = |offset: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        offset,
        msg: msg.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(fail(0, "missing P6 magic number"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (n, field) in fields.iter_mut().enumerate() {
        // Whitespace and `#` comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(fail(pos, &format!("expected header field {}", ["width", "height", "maxval"][n])));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fail(start, "header number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(fail(pos, &format!("unsupported maxval {maxval} (only 255)")));
    }
    if width == 0 || height == 0 {
        return Err(fail(pos, "image has zero extent"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(fail(pos, "expected a single whitespace byte before the raster"));
    }
    pos += 1;
    let need = width * height * 3;
    let have = bytes.len() - pos;
    if have < need {
        return Err(fail(bytes.len(), &format!("raster truncated: {have} of {need} bytes")));
    }
    Ok(RgbImage {
        width,
        height,
        pixels: bytes[pos..pos + need].to_vec(),
    })
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

pub fn write_ppm(img: &RgbImage, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

/// Loads a P6 frame as a `[3×H×W]` tensor in `[−1, 1]`.
pub fn load_frame<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    Ok(read_ppm(path)?.to_tensor())
}

/// Saves a `[3×H×W]` tensor in `[−1, 1]` as a P6 frame.
pub fn save_frame<T: Scalar>(frame: &Tensor<T>, path: &Path) -> Result<()> {
    write_ppm(&RgbImage::from_tensor(frame)?, path)
}

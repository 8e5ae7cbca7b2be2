//! Frame files, manifests, cropping and the synthetic dataset.

pub mod crop;
pub mod manifest;
pub mod ppm;
pub mod probe;
pub mod toy;

use std::fs;
use std::path::{Path, PathBuf};

use psl_core::{Error, Result, Scalar, Tensor};

pub use crop::{apply_crop, resize_bilinear, BBox};
pub use manifest::{Manifest, ManifestRecord, MANIFEST_HEADER};
pub use ppm::{load_frame, save_frame};
pub use toy::{generate_toy_dataset, ToyDataSpec};

use crate::blur::gaussian_blur;

/// The `.ppm` files of a frame directory in name order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")) {
            frames.push(path);
        }
    }
    frames.sort();
    Ok(frames)
}

/// Indices of `m` frames spread evenly over `available`, taking the centre of each
/// of `m` equal segments. Short videos repeat frames.
pub fn sample_indices(available: usize, m: usize) -> Vec<usize> {
    (0..m).map(|i| ((2 * i + 1) * available) / (2 * m)).collect()
}

/// How frames are prepared for the frame encoder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramePrep {
    pub frames: usize,
    pub size: usize,
    pub blur_k: usize,
}

/// Loads `prep.frames` evenly spaced frames from `dir`, crops each to `bbox` (or the
/// whole frame), resizes to `prep.size` and applies the blur.
pub fn load_video<T: Scalar>(dir: &Path, bbox: Option<BBox>, prep: FramePrep) -> Result<Vec<Tensor<T>>> {
    let files = list_frames(dir)?;
    if files.is_empty() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no .ppm frames")));
    }
    sample_indices(files.len(), prep.frames)
        .into_iter()
        .map(|i| {
            let frame: Tensor<T> = load_frame(&files[i])?;
            let (h, w) = (frame.shape()[1], frame.shape()[2]);
            let bbox = bbox.unwrap_or(BBox::full(w, h));
            let cropped = apply_crop(&frame, bbox, prep.size)
                .map_err(|e| Error::contract(format!("{}: {e}", files[i].display())))?;
            gaussian_blur(&cropped, prep.blur_k)
        })
        .collect()
}

//! A logistic-regression probe on per-video mean colour, used to certify that a
//! dataset's classes are separable by simple statistics.

use psl_core::{Error, Result, Tensor64};
use psl_models::{Modality, PainLabel};

use super::manifest::Manifest;
use super::{list_frames, load_frame};

/// Mean of each colour channel over all frames of every video of `modality`.
pub fn mean_colour_features(manifest: &Manifest, modality: Modality) -> Result<(Vec<[f64; 3]>, Vec<PainLabel>)> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for r in manifest.records.iter().filter(|r| r.modality == modality) {
        let mut sums = [0.0; 3];
        let mut count = 0usize;
        for path in list_frames(&manifest.frame_dir(r))? {
            let f: Tensor64 = load_frame(&path)?;
            let plane = f.numel() / 3;
            for (c, s) in sums.iter_mut().enumerate() {
                *s += f.data()[c * plane..(c + 1) * plane].iter().sum::<f64>();
            }
            count += plane;
        }
        if count == 0 {
            return Err(Error::contract(format!("video {}/{} has no frames", r.subject_id, r.video_id)));
        }
        features.push(sums.map(|s| s / count as f64));
        labels.push(r.label);
    }
    Ok((features, labels))
}

/// Fits a logistic regression by full-batch gradient descent on standardized
/// features and returns its training accuracy.
pub fn logistic_probe(features: &[[f64; 3]], targets: &[bool], iterations: usize, lr: f64) -> f64 {
    let n = features.len() as f64;
    let mean: [f64; 3] = std::array::from_fn(|c| features.iter().map(|f| f[c]).sum::<f64>() / n);
    let std: [f64; 3] = std::array::from_fn(|c| {
        (features.iter().map(|f| (f[c] - mean[c]).powi(2)).sum::<f64>() / n).sqrt().max(1e-12)
    });
    let xs: Vec<[f64; 3]> = features.iter().map(|f| std::array::from_fn(|c| (f[c] - mean[c]) / std[c])).collect();
    let (mut w, mut b) = ([0.0; 3], 0.0);
    let score = |w: &[f64; 3], b: f64, x: &[f64; 3]| b + (0..3).map(|c| w[c] * x[c]).sum::<f64>();
    for _ in 0..iterations {
        let (mut gw, mut gb) = ([0.0; 3], 0.0);
        for (x, &t) in xs.iter().zip(targets) {
            let p = 1.0 / (1.0 + (-score(&w, b, x)).exp());
            let err = p - t as u8 as f64;
            for c in 0..3 {
                gw[c] += err * x[c] / n;
            }
            gb += err / n;
        }
        for c in 0..3 {
            w[c] -= lr * gw[c];
        }
        b -= lr * gb;
    }
    let correct = xs.iter().zip(targets).filter(|(x, &t)| (score(&w, b, x) > 0.0) == t).count();
    correct as f64 / n
}

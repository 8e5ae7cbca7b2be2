//! Synthetic paired RGB/thermal videos standing in for the restricted pain dataset.
//!
//! Each class is a brightness level plus a grating whose orientation depends on the
//! class. Subjects shift the grating phase and tint the image, videos jitter the
//! brightness, and frames drift the grating and add pixel noise. Thermal frames are
//! a fixed recolouring of the RGB luminance. Frames are written with a border around
//! the face box, so loading exercises the crop.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use psl_core::{Error, Result, Tensor64};
use psl_models::gan::pseudo_thermal;
use psl_models::{Modality, PainLabel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::crop::BBox;
use super::manifest::{Manifest, ManifestRecord};
use super::ppm::save_frame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyDataSpec {
    pub num_subjects: usize,
    pub videos_per_class: usize,
    pub frames_per_video: usize,
    /// Edge of the face box; frames carry an extra border of a quarter of this.
    pub image_size: usize,
    /// Scales the class-dependent brightness and grating amplitude.
    pub signal: f64,
    pub seed: u64,
    /// Classes to generate, by label name.
    pub labels: Vec<String>,
}

impl Default for ToyDataSpec {
    fn default() -> Self {
        Self {
            num_subjects: 4,
            videos_per_class: 4,
            frames_per_video: 16,
            image_size: 16,
            signal: 1.0,
            seed: 0,
            labels: vec!["NP".into(), "P4".into()],
        }
    }
}

impl ToyDataSpec {
    pub fn parsed_labels(&self) -> Result<Vec<PainLabel>> {
        let labels: Vec<PainLabel> = self.labels.iter().map(|l| l.parse()).collect::<Result<_>>()?;
        let mut sorted = labels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != labels.len() || labels.len() < 2 {
            return Err(Error::config(format!("toy labels {:?} must be at least two distinct levels", self.labels)));
        }
        Ok(labels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_subjects == 0 || self.videos_per_class == 0 || self.frames_per_video == 0 || self.image_size < 2 {
            return Err(Error::config(
                "toy data needs positive subject, video and frame counts and an image size of at least 2",
            ));
        }
        if !(self.signal > 0.0 && self.signal.is_finite()) {
            return Err(Error::config(format!("toy signal strength {} must be positive", self.signal)));
        }
        self.parsed_labels().map(|_| ())
    }

    /// Border added on each side of the face box.
    pub fn margin(&self) -> usize {
        self.image_size / 4
    }
}

struct SubjectStyle {
    phase: f64,
    brightness: f64,
    tint: [f64; 3],
}

/// Writes frames and `manifest.csv` under `out_dir` and returns the manifest.
/// The output is a pure function of `spec`.
pub fn generate_toy_dataset(spec: &ToyDataSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let labels = spec.parsed_labels()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, 0.05).expect("valid std");
    let (size, margin) = (spec.image_size, spec.margin());
    let side = size + 2 * margin;
    let bbox = BBox {
        x: margin,
        y: margin,
        w: size,
        h: size,
    };
    let mut records = Vec::new();
    for s in 0..spec.num_subjects {
        let subject = format!("s{:02}", s + 1);
        let style = SubjectStyle {
            phase: rng.gen_range(0.0..2.0 * PI),
            brightness: rng.gen_range(-0.05..0.05),
            tint: std::array::from_fn(|_| rng.gen_range(-0.05..0.05)),
        };
        for (c, &label) in labels.iter().enumerate() {
            let level = c as f64 / (labels.len() - 1) as f64 - 0.5;
            let angle = PI * c as f64 / labels.len() as f64;
            let (dx, dy) = (angle.cos(), angle.sin());
            for v in 0..spec.videos_per_class {
                let video = format!("{label}_{v}");
                let jitter = rng.gen_range(-0.02..0.02);
                let rel_rgb = PathBuf::from(&subject).join(&video).join("rgb");
                let rel_thermal = PathBuf::from(&subject).join(&video).join("thermal");
                for dir in [&rel_rgb, &rel_thermal] {
                    let dir = out_dir.join(dir);
                    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                }
                for f in 0..spec.frames_per_video {
                    let drift = 0.2 * f as f64;
                    let plane = side * side;
                    let mut rgb = vec![0.0; 3 * plane];
                    for y in 0..side {
                        for x in 0..side {
                            let inside = (margin..margin + size).contains(&x) && (margin..margin + size).contains(&y);
                            let mut px = [0.0; 3];
                            if inside {
                                let (u, w) = ((x - margin) as f64 / size as f64, (y - margin) as f64 / size as f64);
                                let wave = (2.0 * PI * 2.0 * (u * dx + w * dy) + style.phase + drift).sin();
                                let base = spec.signal * (0.4 * level + 0.25 * wave) + style.brightness + jitter;
                                for (ch, p) in px.iter_mut().enumerate() {
                                    *p = base * [1.0, 0.9, 0.8][ch] + style.tint[ch];
                                }
                            }
                            for (ch, p) in px.iter().enumerate() {
                                rgb[ch * plane + y * side + x] = (p + noise.sample(&mut rng)).clamp(-1.0, 1.0);
                            }
                        }
                    }
                    let mut thermal = vec![0.0; 3 * plane];
                    for i in 0..plane {
                        let t = pseudo_thermal([rgb[i], rgb[plane + i], rgb[2 * plane + i]]);
                        for ch in 0..3 {
                            thermal[ch * plane + i] = t[ch];
                        }
                    }
                    let name = format!("frame_{f:03}.ppm");
                    for (rel, data) in [(&rel_rgb, rgb), (&rel_thermal, thermal)] {
                        let frame = Tensor64::new(vec![3, side, side], data)?;
                        save_frame(&frame, &out_dir.join(rel).join(&name))?;
                    }
                }
                for (modality, rel) in [(Modality::Rgb, &rel_rgb), (Modality::Thermal, &rel_thermal)] {
                    records.push(ManifestRecord {
                        subject_id: subject.clone(),
                        video_id: video.clone(),
                        label,
                        modality,
                        frame_dir: rel.clone(),
                        bbox: Some(bbox),
                    });
                }
            }
        }
    }
    let manifest = Manifest::new(out_dir, records)?;
    manifest.save(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

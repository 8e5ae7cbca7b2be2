//! CSV manifests listing one frame directory per (subject, video, modality).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use psl_core::{Error, Result};
use psl_models::{Modality, PainLabel};

use super::crop::BBox;

pub const MANIFEST_HEADER: [&str; 9] = [
    "subject_id",
    "video_id",
    "label",
    "modality",
    "frame_dir",
    "bbox_x",
    "bbox_y",
    "bbox_w",
    "bbox_h",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub subject_id: String,
    pub video_id: String,
    pub label: PainLabel,
    /// RGB or THERMAL.
    pub modality: Modality,
    /// Relative paths are resolved against the manifest's directory.
    pub frame_dir: PathBuf,
    pub bbox: Option<BBox>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    /// Validates keys and labels; see [`Manifest::load`] for the rules.
    pub fn new(root: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if r.modality == Modality::Fused {
                return Err(Error::config(format!(
                    "video {}/{}: manifest rows must be RGB or THERMAL",
                    r.subject_id, r.video_id
                )));
            }
            if !seen.insert((r.subject_id.as_str(), r.video_id.as_str(), r.modality)) {
                return Err(Error::config(format!(
                    "duplicate manifest key ({}, {}, {})",
                    r.subject_id, r.video_id, r.modality
                )));
            }
        }
        Ok(Self {
            root: root.into(),
            records,
        })
    }

    /// Reads a manifest. Rejects unknown labels or modalities, partial boxes and
    /// duplicate (subject, video, modality) keys.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        let parse = |line: u64, msg: String| Error::Parse {
            path: path.to_path_buf(),
            offset: line as usize,
            msg,
        };
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_slice());
        let header = reader.headers().map_err(|e| parse(0, e.to_string()))?.clone();
        if header.iter().ne(MANIFEST_HEADER) {
            return Err(parse(0, format!("header must be `{}`", MANIFEST_HEADER.join(","))));
        }
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| parse(e.position().map_or(0, |p| p.byte()), e.to_string()))?;
            let at = row.position().map_or(0, |p| p.byte());
            let field = |i: usize| row.get(i).unwrap_or("");
            let bad = |msg: String| parse(at, msg);
            let bbox_fields: Vec<&str> = (5..9).map(field).collect();
            let bbox = if bbox_fields.iter().all(|f| f.is_empty()) {
                None
            } else {
                let nums: Vec<usize> = bbox_fields
                    .iter()
                    .map(|f| f.parse().map_err(|_| bad(format!("bad bounding box field `{f}`"))))
                    .collect::<Result<_>>()?;
                Some(BBox {
                    x: nums[0],
                    y: nums[1],
                    w: nums[2],
                    h: nums[3],
                })
            };
            records.push(ManifestRecord {
                subject_id: field(0).to_string(),
                video_id: field(1).to_string(),
                label: field(2).parse().map_err(|e: Error| bad(e.to_string()))?,
                modality: field(3).parse().map_err(|e: Error| bad(e.to_string()))?,
                frame_dir: PathBuf::from(field(4)),
                bbox,
            });
            if records.last().is_some_and(|r| r.subject_id.is_empty() || r.video_id.is_empty()) {
                return Err(bad("empty subject or video id".into()));
            }
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(root, records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
        for r in &self.records {
            let b = |f: fn(&BBox) -> usize| r.bbox.as_ref().map_or(String::new(), |b| f(b).to_string());
            w.write_record([
                r.subject_id.clone(),
                r.video_id.clone(),
                r.label.to_string(),
                r.modality.to_string(),
                r.frame_dir.to_string_lossy().into_owned(),
                b(|b| b.x),
                b(|b| b.y),
                b(|b| b.w),
                b(|b| b.h),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn frame_dir(&self, r: &ManifestRecord) -> PathBuf {
        self.root.join(&r.frame_dir)
    }

    /// Requires a THERMAL row for every RGB row and vice versa, with matching labels.
    pub fn check_pairing(&self) -> Result<()> {
        let mut by_video: BTreeMap<(&str, &str), [Option<&ManifestRecord>; 2]> = BTreeMap::new();
        for r in &self.records {
            let slot = if r.modality == Modality::Rgb { 0 } else { 1 };
            by_video.entry((&r.subject_id, &r.video_id)).or_default()[slot] = Some(r);
        }
        let mut problems = Vec::new();
        for ((s, v), pair) in &by_video {
            match pair {
                [Some(rgb), Some(th)] if rgb.label != th.label => {
                    problems.push(format!("{s}/{v}: RGB label {} but THERMAL label {}", rgb.label, th.label))
                }
                [Some(_), Some(_)] => {}
                [Some(_), None] => problems.push(format!("{s}/{v}: RGB without THERMAL")),
                [None, _] => problems.push(format!("{s}/{v}: THERMAL without RGB")),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!("unpaired manifest rows: {}", problems.join("; "))))
        }
    }

    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.subject_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use psl_core::Error;
use psl_eval::data::probe::{logistic_probe, mean_colour_features};
use psl_eval::data::{generate_toy_dataset, list_frames, BBox, Manifest, ManifestRecord, ToyDataSpec, MANIFEST_HEADER};
use psl_models::{Modality, PainLabel};
use sha2::{Digest, Sha256};

fn record(subject: &str, video: &str, modality: Modality) -> ManifestRecord {
    ManifestRecord {
        subject_id: subject.into(),
        video_id: video.into(),
        label: PainLabel::Np,
        modality,
        frame_dir: PathBuf::from(format!("{subject}/{video}")),
        bbox: Some(BBox { x: 1, y: 2, w: 3, h: 4 }),
    }
}

#[test]
fn duplicate_keys_are_rejected() {
    let rows = vec![record("a", "v", Modality::Rgb), record("a", "v", Modality::Rgb)];
    assert!(matches!(Manifest::new(".", rows), Err(Error::Config(_))));
    let rows = vec![record("a", "v", Modality::Rgb), record("a", "v", Modality::Thermal)];
    assert!(Manifest::new(".", rows).is_ok());
    assert!(Manifest::new(".", vec![record("a", "v", Modality::Fused)]).is_err());
}

#[test]
fn pairing_is_checked() {
    let m = Manifest::new(".", vec![record("a", "v", Modality::Rgb), record("a", "w", Modality::Thermal)]).unwrap();
    let msg = m.check_pairing().unwrap_err().to_string();
    assert!(msg.contains("a/v: RGB without THERMAL") && msg.contains("a/w: THERMAL without RGB"), "{msg}");

    let mut th = record("a", "v", Modality::Thermal);
    th.label = PainLabel::P4;
    let m = Manifest::new(".", vec![record("a", "v", Modality::Rgb), th]).unwrap();
    assert!(m.check_pairing().is_err());
}

#[test]
fn manifest_round_trip_and_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let mut plain = record("s2", "x", Modality::Thermal);
    plain.bbox = None;
    let m = Manifest::new(dir.path(), vec![record("s1", "v", Modality::Rgb), plain]).unwrap();
    m.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with(&MANIFEST_HEADER.join(",")));
    assert_eq!(Manifest::load(&path).unwrap(), m);
    assert_eq!(m.subjects(), ["s1", "s2"]);

    let header = MANIFEST_HEADER.join(",");
    let cases = [
        (format!("{header}\ns1,v,P9,RGB,d,,,,\n"), header.len() + 1),
        (format!("{header}\ns1,v,NP,RGB,d,1,2,,\n"), header.len() + 1),
        (format!("{header}\ns1,v,NP,RGB,d,,,,\ns1,w,NP,DEPTH,d,,,,\n"), header.len() + 1 + 18),
        ("subject,video\n".to_string(), 0),
    ];
    for (body, offset) in cases {
        std::fs::write(&path, &body).unwrap();
        match Manifest::load(&path).unwrap_err() {
            Error::Parse { offset: got, .. } => assert_eq!(got, offset, "{body}"),
            other => panic!("{other:?}"),
        }
    }
    assert!(Manifest::load(&dir.path().join("absent.csv")).unwrap_err().is_io());
}

fn small_spec() -> ToyDataSpec {
    ToyDataSpec {
        num_subjects: 2,
        videos_per_class: 1,
        frames_per_video: 3,
        image_size: 8,
        ..Default::default()
    }
}

#[test]
fn row_count_law() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_toy_dataset(&small_spec(), dir.path()).unwrap();
    for modality in [Modality::Rgb, Modality::Thermal] {
        assert_eq!(m.records.iter().filter(|r| r.modality == modality).count(), 4);
    }
    m.check_pairing().unwrap();
    assert_eq!(Manifest::load(&dir.path().join("manifest.csv")).unwrap().records, m.records);
    for r in &m.records {
        let frames = list_frames(&m.frame_dir(r)).unwrap();
        assert_eq!(frames.len(), 3);
        let img = psl_eval::data::ppm::read_ppm(&frames[0]).unwrap();
        assert_eq!((img.width, img.height), (12, 12));
        assert_eq!(r.bbox, Some(BBox { x: 2, y: 2, w: 8, h: 8 }));
    }
}

fn hashes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let digest = Sha256::digest(std::fs::read(&path).unwrap()).to_vec();
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), digest);
            }
        }
    }
    out
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = small_spec();
    generate_toy_dataset(&spec, a.path()).unwrap();
    generate_toy_dataset(&spec, b.path()).unwrap();
    let ha = hashes(a.path());
    assert_eq!(ha.len(), 8 * 3 + 1);
    assert_eq!(ha, hashes(b.path()));

    generate_toy_dataset(&ToyDataSpec { seed: 1, ..spec }, c.path()).unwrap();
    assert_ne!(ha, hashes(c.path()));
}

#[test]
fn mean_colour_probe_separates_the_classes() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_toy_dataset(&ToyDataSpec::default(), dir.path()).unwrap();
    for modality in [Modality::Rgb, Modality::Thermal] {
        let (features, labels) = mean_colour_features(&m, modality).unwrap();
        assert_eq!(features.len(), 32);
        let targets: Vec<bool> = labels.iter().map(|&l| l == PainLabel::P4).collect();
        let acc = logistic_probe(&features, &targets, 2000, 0.5);
        assert!(acc > 0.95, "{modality}: {acc}");
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for spec in [
        ToyDataSpec { num_subjects: 0, ..small_spec() },
        ToyDataSpec { labels: vec!["NP".into()], ..small_spec() },
        ToyDataSpec { labels: vec!["NP".into(), "XX".into()], ..small_spec() },
        ToyDataSpec { frames_per_video: 0, ..small_spec() },
    ] {
        assert!(generate_toy_dataset(&spec, dir.path()).is_err());
    }
}

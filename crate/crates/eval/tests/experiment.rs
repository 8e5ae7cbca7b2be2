use std::path::Path;

use psl_core::Error;
use psl_eval::config::Config;
use psl_eval::counts::{analytic_counts, measured_counts};
use psl_eval::data::{generate_toy_dataset, Manifest, ToyDataSpec};
use psl_eval::experiment::{
    check_rgb_equivalence, load_samples, run_blur_sweep, run_from_config, run_fusion_sweep, write_results, RunSpec,
    FOLDS_HEADER,
};
use psl_models::{FusionMode, Modality};

/// A small but complete setup: `subjects` subjects, 2 videos per class, 4 frames each.
fn setup(dir: &Path, subjects: usize) -> Config {
    let mut cfg = Config::default();
    cfg.toy = ToyDataSpec {
        num_subjects: subjects,
        videos_per_class: 2,
        frames_per_video: 6,
        ..Default::default()
    };
    cfg.data.frames = 4;
    cfg.temporal.latents = 2;
    cfg.experiment.epochs = 15;
    cfg.optim.batch_size = 4;
    cfg.optim.warmup_epochs = 1;
    generate_toy_dataset(&cfg.toy, dir).unwrap();
    cfg.data.manifest = dir.join("manifest.csv");
    cfg
}

#[test]
fn two_subjects_give_two_folds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 2);
    let run = run_from_config(&cfg, RunSpec::from_config(&cfg)).unwrap();
    assert_eq!(run.folds.len(), 2);
    assert_eq!(run.report.n_samples, 8);
    assert_eq!(run.modality, "FUSED");
    assert_eq!(run.fusion, "W2");
    let recount: u64 = run.folds.iter().map(|f| f.n_correct as u64).sum();
    assert_eq!(run.report.n_correct, recount);
    for f in &run.folds {
        assert_eq!((f.n_train, f.n_test), (4, 4));
        assert_eq!(f.confusion.iter().flatten().sum::<u64>(), 4);
        assert!(f.final_train_loss.is_finite());
    }
}

#[test]
fn same_seed_writes_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 3);
    let out = |name: &str| {
        let run = run_from_config(&cfg, RunSpec::from_config(&cfg)).unwrap();
        let path = dir.path().join(name);
        write_results(&path, &[run]).unwrap();
        (
            std::fs::read(path.join("summary.json")).unwrap(),
            std::fs::read_to_string(path.join("folds.csv")).unwrap(),
        )
    };
    let (a, b) = (out("a"), out("b"));
    assert_eq!(a, b);

    let csv = a.1;
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), FOLDS_HEADER.join(","));
    let subjects: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(subjects, ["s01", "s02", "s03"]);
    let json: serde_json::Value = serde_json::from_slice(&a.0).unwrap();
    assert_eq!(json["runs"][0]["folds"].as_array().unwrap().len(), 3);
    assert_eq!(json["runs"][0]["report"]["task"], "binary");
}

#[test]
fn missing_frames_fail_fast_with_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 2);
    std::fs::remove_dir_all(dir.path().join("s02/P4_1/thermal")).unwrap();
    std::fs::remove_dir_all(dir.path().join("s01/NP_0/thermal")).unwrap();
    let err = load_samples(&cfg, Modality::Fused, 0).unwrap_err();
    assert!(err.is_io());
    let msg = err.to_string();
    assert!(msg.contains("s02/P4_1/thermal") && msg.contains("s01/NP_0/thermal"), "{msg}");
    // RGB-only runs do not touch thermal frames.
    assert!(load_samples(&cfg, Modality::Rgb, 0).is_ok());

    // A manifest without the thermal rows fails the pairing check for fused runs.
    let mut m = Manifest::load(&cfg.data.manifest).unwrap();
    m.records.retain(|r| !(r.subject_id == "s01" && r.modality == Modality::Thermal));
    m.save(&cfg.data.manifest).unwrap();
    assert!(matches!(load_samples(&cfg, Modality::Fused, 0), Err(Error::Config(_))));
}

#[test]
fn blur_sweep_emits_one_row_set_per_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), 2);
    cfg.experiment.epochs = 2;
    let runs = run_blur_sweep(&cfg).unwrap();
    assert_eq!(runs.iter().map(|r| r.blur_k).collect::<Vec<_>>(), [0, 41, 91, 191]);
    write_results(dir.path(), &runs).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("folds.csv")).unwrap();
    for k in [0, 41, 91, 191] {
        let rows = csv.lines().skip(1).filter(|l| l.ends_with(&format!(",{k}"))).count();
        assert_eq!(rows, 2, "k={k}");
    }

    // k = 0 leaves the loaded frames bit-identical.
    let plain = load_samples(&cfg, Modality::Fused, 0).unwrap();
    for frame in plain[0].rgb.as_ref().unwrap() {
        assert_eq!(&psl_eval::gaussian_blur(frame, 0).unwrap(), frame);
    }
    let blurred = load_samples(&cfg, Modality::Fused, 41).unwrap();
    assert_ne!(plain[0].rgb, blurred[0].rgb);
}

#[test]
fn fusion_modes_all_run_and_w2_reduces_to_rgb() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), 2);
    cfg.experiment.epochs = 2;
    let runs = run_fusion_sweep(&cfg).unwrap();
    assert_eq!(runs.iter().map(|r| r.fusion.as_str()).collect::<Vec<_>>(), ["NONE", "W2", "W3"]);

    let samples = load_samples(&cfg, Modality::Fused, 0).unwrap();
    let eq = check_rgb_equivalence(&cfg, &samples).unwrap();
    assert_eq!(eq.videos, 8);
    assert_eq!(eq.identical_predictions, 8);
    assert_eq!(eq.identical_logits, 8);
}

#[test]
fn trainable_backbone_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), 2);
    cfg.backbone.trainable = true;
    cfg.experiment.epochs = 3;
    let run = run_from_config(&cfg, RunSpec::from_config(&cfg)).unwrap();
    assert!(run.folds.iter().all(|f| f.final_train_loss.is_finite()));
}

#[test]
fn analytic_counts_match_the_built_pipeline() {
    let cfg = Config::default();
    for modality in [Modality::Rgb, Modality::Thermal, Modality::Fused] {
        for fusion in [FusionMode::None, FusionMode::W2, FusionMode::W3] {
            let a = analytic_counts(&cfg, modality, fusion).unwrap();
            let m = measured_counts(&cfg, modality, fusion).unwrap();
            assert_eq!(a, m, "{modality} {fusion}");
        }
    }
    let w3 = analytic_counts(&cfg, Modality::Fused, FusionMode::W3).unwrap();
    assert_eq!(w3.fusion_params, 3);
    assert_eq!(w3.backbone_flops_per_video, w3.backbone_flops_per_frame * 16 * 2);
}

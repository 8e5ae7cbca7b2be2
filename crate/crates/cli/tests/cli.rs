use std::path::Path;
use std::process::Command;

use psl_cli::{run_with_output, EXIT_FAILURE, EXIT_IO, EXIT_OK, EXIT_USAGE};
use psl_eval::config::Config;

fn psl(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_psl")).args(args).output().expect("binary runs");
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn call(args: &[&str]) -> (i32, String) {
    let mut buf = Vec::new();
    let argv = std::iter::once("psl").chain(args.iter().copied());
    let code = run_with_output(argv, &mut buf);
    (code, String::from_utf8(buf).expect("utf-8 output"))
}

/// A small frozen-encoder config whose manifest lives in `dir`, with data generated.
fn quick_setup(dir: &Path) -> String {
    let mut cfg = Config::default();
    cfg.toy.num_subjects = 2;
    cfg.data.manifest = dir.join("data/manifest.csv");
    cfg.backbone.trainable = false;
    cfg.experiment.epochs = 3;
    cfg.optim.warmup_epochs = 1;
    let path = dir.join("quick.cfg");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let path = path.to_str().unwrap().to_string();
    let (code, out) = call(&["gen-toy-data", "--config", &path]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.contains("probe accuracy"), "{out}");
    path
}

#[test]
fn help_and_version_succeed() {
    for flag in ["--help", "--version"] {
        let (code, stdout, _) = psl(&[flag]);
        assert_eq!(code, EXIT_OK);
        assert!(!stdout.is_empty());
    }
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(psl(&[]).0, EXIT_USAGE);
    assert_eq!(psl(&["loso", "--no-such-flag"]).0, EXIT_USAGE);
    assert_eq!(psl(&["no-such-command"]).0, EXIT_USAGE);
    assert_eq!(psl(&["loso", "--seed", "many"]).0, EXIT_USAGE);
}

#[test]
fn missing_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.cfg");
    let (code, _, stderr) = psl(&["count-params", "--config", missing.to_str().unwrap()]);
    assert_eq!(code, EXIT_IO);
    assert!(stderr.contains("absent.cfg"), "{stderr}");
    let (code, _) = call(&["metrics", "--results", dir.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_IO);
}

#[test]
fn bad_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "[optim]\nlearning_rate = \"fast\"\n").unwrap();
    let (code, _, stderr) = psl(&["count-params", "--config", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_FAILURE);
    assert!(!stderr.is_empty());
}

#[test]
fn gradcheck_passes() {
    let (code, out) = call(&["gradcheck"]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.contains("max relative error"), "{out}");
}

#[test]
fn loso_is_reproducible_and_metrics_recount() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_setup(dir.path());
    let mut summaries = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let (code, out) = call(&["loso", "--config", &cfg, "--seed", "7", "--out", out_dir.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK, "{out}");
        assert!(out.contains("fold s01"), "{out}");
        summaries.push(std::fs::read(out_dir.join("summary.json")).unwrap());
        assert!(out_dir.join("folds.csv").exists());
    }
    assert_eq!(summaries[0], summaries[1]);

    let results = dir.path().join("a");
    let (code, out) = call(&["metrics", "--results", results.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.contains("recall"), "{out}");

    // Tampering with a stored score is caught by the recount.
    let path = results.join("summary.json");
    let mut summary: serde_json::Value = serde_json::from_slice(&summaries[0]).unwrap();
    let acc = &mut summary["runs"][0]["report"]["accuracy"];
    *acc = serde_json::json!(acc.as_f64().unwrap() * 0.5 + 0.01);
    std::fs::write(&path, serde_json::to_vec(&summary).unwrap()).unwrap();
    let (code, _) = call(&["metrics", "--results", results.to_str().unwrap()]);
    assert_eq!(code, EXIT_FAILURE);

    // A corrupt results file is a file-format error, reported like other IO failures.
    std::fs::write(&path, "{ not json").unwrap();
    let (code, _) = call(&["metrics", "--results", results.to_str().unwrap()]);
    assert_eq!(code, EXIT_IO);
}

#[test]
fn train_then_translate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_setup(dir.path());
    let model = dir.path().join("model");
    let (code, out) = call(&["train", "--config", &cfg, "--out", model.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(model.join("model.pslb").exists() && model.join("train.json").exists());

    let gan = dir.path().join("gan");
    let (code, out) = call(&["train-gan", "--config", &cfg, "--out", gan.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.contains("MAE"), "{out}");
    let ckpt = gan.join("generator.pslb");
    assert!(ckpt.exists() && gan.join("gan_log.csv").exists());

    let frames = find_ppm_dir(&dir.path().join("data")).expect("a frame directory");
    let translated = dir.path().join("thermal");
    let (code, out) = call(&[
        "translate",
        "--config",
        &cfg,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        frames.to_str().unwrap(),
        "--out",
        translated.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{out}");
    let written = std::fs::read_dir(&translated).unwrap().count();
    let inputs = std::fs::read_dir(&frames)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ppm"))
        .count();
    assert_eq!(written, inputs);
}

fn find_ppm_dir(dir: &Path) -> Option<std::path::PathBuf> {
    let entries: Vec<_> = std::fs::read_dir(dir).ok()?.map(|e| e.unwrap().path()).collect();
    if entries.iter().any(|p| p.extension().is_some_and(|x| x == "ppm")) {
        return Some(dir.to_path_buf());
    }
    entries.iter().filter(|p| p.is_dir()).find_map(|p| find_ppm_dir(p))
}

//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use psl_core::{ParamStore64, Tape64, Tensor32, Tensor64};
use psl_eval::config::Config;
use psl_eval::counts::{analytic_counts, measured_counts};
use psl_eval::data::generate_toy_dataset;
use psl_eval::experiment::{check_rgb_equivalence, load_samples, run_experiment, RunSpec};
use psl_eval::gaussian_blur;
use psl_eval::gradsuite::run_gradient_suite;
use psl_eval::loso::loso_folds;
use psl_eval::{compute_metrics, FoldResult};
use psl_models::augment::{augment_mask, AugmentConfig, AugmentPlan};
use psl_models::backbone::{count_flops as backbone_flops, count_params as backbone_params, wave_block};
use psl_models::gan::{gradient_penalty, toy_color_pairs, Discriminator, GanBundle, GanConfig};
use psl_models::temporal::{count_flops as temporal_flops, count_params as temporal_params};
use psl_models::{BackboneConfig, FusionMode, Modality, TemporalConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// `configs/toy.cfg` with its manifest pointed at `dir`, after generating the data there.
fn toy_setup(dir: &Path, subjects: usize) -> Result<Config, String> {
    let mut cfg = Config::load(&repo_root().join("configs/toy.cfg")).map_err(err)?;
    cfg.toy.num_subjects = subjects;
    generate_toy_dataset(&cfg.toy, dir).map_err(err)?;
    cfg.data.manifest = dir.join("manifest.csv");
    Ok(cfg)
}

/// A short schedule for criteria that test mechanics rather than learning.
fn quick(mut cfg: Config) -> Config {
    cfg.backbone.trainable = false;
    cfg.experiment.epochs = 5;
    cfg.optim.warmup_epochs = 1;
    cfg
}

fn psl(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_psl")).args(args).output().map_err(err)?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    if out.status.success() {
        Ok(stdout)
    } else {
        Err(format!(
            "psl {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let cases = run_gradient_suite().map_err(err)?;
    let elapsed = start.elapsed();
    let required = [
        "wave_block",
        "token_mixer",
        "scaled_dot_attention",
        "cross_attention",
        "fuse_w2",
        "fuse_w3",
        "multitask_loss",
        "cgan_losses_sigmoid_log",
        "cgan_losses_wasserstein",
        "gradient_penalty",
        "double_backward_conv",
    ];
    for name in required {
        check(cases.iter().any(|c| c.name == name), || format!("suite lacks {name}"))?;
    }
    let worst = cases.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).expect("cases");
    check(worst.max_rel_err < 1e-4, || format!("{} has error {:e}", worst.name, worst.max_rel_err))?;
    check(elapsed < Duration::from_secs(60), || format!("suite took {elapsed:?}"))?;
    Ok(format!(
        "{} checks, worst {:.2e} ({}), {:.2?}",
        cases.len(),
        worst.max_rel_err,
        worst.name,
        elapsed
    ))
}

fn wave_oracle() -> Outcome {
    let mut r = rng(2);
    for case in 0..20 {
        let (n, d) = (r.gen_range(1..=4), r.gen_range(1..=4));
        let tokens = Tensor64::randn(&[n, d], 1.0, &mut r);
        let real = Tensor64::randn(&[n, n], 1.0, &mut r);
        let imag = Tensor64::randn(&[n, n], 1.0, &mut r);
        let phase = Tensor64::randn(&[d, d], 1.0, &mut r);
        let tape = Tape64::new();
        let c = |t: &Tensor64| tape.constant(t.clone());
        let got = wave_block(c(&tokens), c(&real), c(&imag), c(&phase)).map_err(err)?.tensor();
        for j in 0..n {
            for ch in 0..d {
                let mut want = 0.0;
                for k in 0..n {
                    let f = tokens.get(&[k, ch]);
                    let theta: f64 = (0..d).map(|e| phase.get(&[ch, e]) * tokens.get(&[k, e])).sum();
                    want += real.get(&[j, k]) * f * theta.cos() + imag.get(&[j, k]) * f * theta.sin();
                }
                let diff = (got.get(&[j, ch]) - want).abs();
                check(diff <= 1e-6, || format!("instance {case} ({j},{ch}): off by {diff:e}"))?;
            }
        }

        let zero = Tensor64::zeros(&[d, d]);
        let reduced = wave_block(c(&tokens), c(&real), c(&imag), c(&zero)).map_err(err)?.tensor();
        let plain = c(&real).matmul(c(&tokens)).map_err(err)?.tensor();
        check(reduced == plain, || format!("instance {case}: zero phase is not plain token mixing"))?;
    }
    Ok("20 instances within 1e-6; zero phase reduces exactly to W·X".into())
}

/// Per-pixel critic whose input gradient has norm `scale` at every pixel.
fn linear_critic(x: psl_core::Var<'_, f64>, scale: f64) -> psl_core::Result<psl_core::Var<'_, f64>> {
    let c = x.shape()[1] as f64;
    x.sum_axis(1)?.scale(scale / c.sqrt())
}

fn wgan_gp_cases() -> Outcome {
    let mut r = rng(3);
    let real = Tensor64::uniform(&[3, 3, 5, 5], -1.0, 1.0, &mut r);
    let fake = Tensor64::uniform(&[3, 3, 5, 5], -1.0, 1.0, &mut r);
    let lambda = 10.0;
    let penalty = |scale: f64| -> Result<f64, String> {
        let tape = Tape64::new();
        gradient_penalty(&tape, |x| linear_critic(x, scale), &real, &fake, lambda, &mut rng(4))
            .and_then(|v| v.item())
            .map_err(err)
    };
    let unit = penalty(1.0)?;
    check(unit.abs() <= 1e-6, || format!("unit-norm critic penalty {unit:e}"))?;
    let doubled = penalty(2.0)?;
    check((doubled - lambda).abs() <= 1e-6, || format!("doubled critic penalty {doubled}"))?;

    let cfg = GanConfig {
        lambda: 0.0,
        ngf: 2,
        ndf: 4,
        res_blocks: 1,
        ..GanConfig::toy()
    };
    let mut bundle = GanBundle::<f64>::new(&cfg, &mut rng(5)).map_err(err)?;
    let (x, y) = (Tensor64::uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut r), Tensor64::uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut r));
    let mut step_rng = rng(6);
    for _ in 0..3 {
        let rec = bundle.train_step(&x, &y, &mut step_rng).map_err(err)?;
        check(rec.loss_d.to_bits() == rec.adversarial_d.to_bits(), || {
            format!("λ=0 total {} differs from adversarial {}", rec.loss_d, rec.adversarial_d)
        })?;
    }
    Ok(format!("penalty {unit:.1e} and {doubled:.6}; λ=0 total is the adversarial loss bit for bit"))
}

fn patchgan_locality() -> Outcome {
    let mut store = ParamStore64::new();
    let d = Discriminator::new(&GanConfig::toy(), &mut store, &mut rng(7)).map_err(err)?;
    let mut r = rng(8);
    let x = Tensor64::uniform(&[1, 3, 8, 8], -1.0, 1.0, &mut r);
    let y = Tensor64::uniform(&[1, 3, 8, 8], -1.0, 1.0, &mut r);
    let score = |x: &Tensor64, y: &Tensor64| -> Result<Tensor64, String> {
        let tape = Tape64::new();
        let p = store.bind_constants(&tape);
        Ok(d.forward(&p, tape.constant(x.clone()), tape.constant(y.clone())).map_err(err)?.tensor())
    };
    let base = score(&x, &y)?;
    check(base.shape() == [1, 1, 8, 8], || format!("score map {:?}", base.shape()))?;
    for pixel in 0..64 {
        for perturb_source in [false, true] {
            let (mut px, mut py) = (x.clone(), y.clone());
            let t = if perturb_source { &mut px } else { &mut py };
            for c in 0..3 {
                t.data_mut()[c * 64 + pixel] += 0.37;
            }
            let moved = score(&px, &py)?;
            for q in 0..64 {
                let changed = moved.data()[q] != base.data()[q];
                check(changed == (q == pixel), || format!("perturbing pixel {pixel} moved score {q}"))?;
            }
        }
    }
    Ok("all 64 pixels, source and target, change only their own score".into())
}

fn size_accounting() -> Outcome {
    let full = Config::load(&repo_root().join("configs/full.cfg")).map_err(err)?;
    let (modality, fusion) = (full.experiment.modality, full.experiment.fusion);
    let analytic = analytic_counts(&full, modality, fusion).map_err(err)?;
    let measured = measured_counts(&full, modality, fusion).map_err(err)?;
    check(analytic == measured, || format!("closed form {analytic:?} vs built {measured:?}"))?;
    let (b, t) = (BackboneConfig::full(), TemporalConfig::full(2));
    check(analytic.backbone_params == backbone_params(&b), || "backbone params".into())?;
    check(analytic.temporal_params == temporal_params(&t).map_err(err)?, || "temporal params".into())?;
    check(analytic.backbone_flops_per_frame == backbone_flops(&b), || "backbone flops".into())?;
    check(analytic.temporal_flops == temporal_flops(&t).map_err(err)?, || "temporal flops".into())?;

    let cfg_path = repo_root().join("configs/full.cfg");
    let cfg_arg = cfg_path.to_str().expect("utf-8 path");
    let params = psl(&["count-params", "--config", cfg_arg])?;
    let flops = psl(&["count-flops", "--config", cfg_arg])?;
    for (text, needle) in [
        (&params, "reference 7.35 M"),
        (&params, "reference 7.96 M"),
        (&params, "reference: Params: 15.31 Millions"),
        (&params, &format!("total params: {}", analytic.total_params())),
        (&flops, "reference 30.95 G"),
        (&flops, "reference 30.90 G"),
        (&flops, "reference: FLOPS: 61.85 Giga"),
        (&flops, &format!("total FLOPs: {}", analytic.total_flops())),
    ] {
        check(text.contains(needle), || format!("output lacks `{needle}`"))?;
    }
    Ok(format!(
        "params {} (ref 15.31 M), FLOPs {:.2} G (ref 61.85 G); closed form equals built model",
        analytic.total_params(),
        analytic.total_flops() as f64 / 1e9
    ))
}

fn loso_protocol() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = quick(toy_setup(dir.path(), 5)?);
    let spec = RunSpec::from_config(&cfg);
    let samples = load_samples(&cfg, spec.modality, spec.blur_k).map_err(err)?;
    let subjects: Vec<&str> = samples.iter().map(|s| s.subject_id.as_str()).collect();
    let folds = loso_folds(&subjects).map_err(err)?;
    check(folds.len() == 5, || format!("{} folds", folds.len()))?;
    let mut hits = vec![0; samples.len()];
    for f in &folds {
        check(f.train.iter().all(|i| !f.test.contains(i)), || format!("fold {} overlaps", f.subject_id))?;
        check(f.train.len() + f.test.len() == samples.len(), || format!("fold {} drops samples", f.subject_id))?;
        check(f.test.iter().all(|&i| subjects[i] == f.subject_id), || "foreign test sample".into())?;
        for &i in &f.test {
            hits[i] += 1;
        }
    }
    check(hits.iter().all(|&h| h == 1), || "a sample is not tested exactly once".into())?;

    let run = run_experiment(&cfg, spec, &samples).map_err(err)?;
    check(run.folds.len() == 5, || format!("{} fold results", run.folds.len()))?;
    let (mut correct, mut total) = (0u64, 0u64);
    for f in &run.folds {
        for (t, row) in f.confusion.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                total += n;
                if t == p {
                    correct += n;
                }
            }
        }
    }
    let recount = correct as f64 / total as f64;
    check(run.report.accuracy == recount, || format!("pooled {} vs recount {recount}", run.report.accuracy))?;
    check(total as usize == samples.len(), || "confusion totals do not cover the data".into())?;
    let rebuilt: Vec<FoldResult> = run
        .folds
        .iter()
        .map(|f| FoldResult {
            subject_id: f.subject_id.clone(),
            task: run.task,
            confusion: f.confusion.clone(),
        })
        .collect();
    check(compute_metrics(&rebuilt).map_err(err)? == run.report, || "report differs from recomputation".into())?;
    Ok(format!("5 folds over {} videos, pooled accuracy {recount:.4} matches recount", samples.len()))
}

fn toy_learning() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = toy_setup(dir.path(), 4)?;
    check(cfg.backbone.trainable, || "toy config must train the encoder".into())?;
    check(cfg.experiment.modality == Modality::Fused && cfg.experiment.fusion == FusionMode::W2, || {
        "toy config must run the fused W2 pipeline".into()
    })?;
    check(cfg.experiment.epochs <= 200, || "epoch budget above 200".into())?;
    let start = Instant::now();
    let spec = RunSpec::from_config(&cfg);
    let samples = load_samples(&cfg, spec.modality, spec.blur_k).map_err(err)?;
    let run = run_experiment(&cfg, spec, &samples).map_err(err)?;
    let elapsed = start.elapsed();
    let worst_train = run.folds.iter().map(|f| f.train_accuracy).fold(1.0, f64::min);
    let held_out = run.report.accuracy;
    check(worst_train >= 0.95, || format!("train accuracy {worst_train}"))?;
    check(held_out >= 0.70, || format!("held-out accuracy {held_out}"))?;
    check(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} epochs end to end: min fold train accuracy {worst_train:.3}, held-out {held_out:.3}, {:.1?}",
        cfg.experiment.epochs, elapsed
    ))
}

fn toy_gan() -> Outcome {
    let cfg = GanConfig::toy();
    let train = || -> Result<(f64, f64, Vec<u32>, bool), String> {
        let mut r = rng(8);
        let (src, dst): (Tensor32, Tensor32) = toy_color_pairs(8, 64, &mut r);
        let mut bundle = GanBundle::<f32>::new(&cfg, &mut r).map_err(err)?;
        let before = bundle.mae(&src, &dst).map_err(err)?;
        let mut finite = true;
        for _ in 0..200 {
            let rec = bundle.train_step(&src, &dst, &mut r).map_err(err)?;
            finite &= [rec.loss_d, rec.loss_g, rec.penalty].iter().all(|v| v.is_finite());
        }
        let after = bundle.mae(&src, &dst).map_err(err)?;
        let bits = bundle.gen_params.iter().flat_map(|(_, _, t)| t.data().iter().map(|v| v.to_bits())).collect();
        Ok((before, after, bits, finite))
    };
    let (before, after, bits, finite) = train()?;
    check(finite, || "non-finite loss".into())?;
    let drop = 1.0 - after / before;
    check(drop >= 0.5, || format!("MAE {before:.4} -> {after:.4} ({:.1}%)", 100.0 * drop))?;
    let (b2, a2, bits2, _) = train()?;
    check(b2.to_bits() == before.to_bits() && a2.to_bits() == after.to_bits() && bits2 == bits, || {
        "seeded rerun differs".into()
    })?;
    Ok(format!("MAE {before:.4} -> {after:.4} ({:.1}% lower), rerun bit-identical", 100.0 * drop))
}

fn augmentation_statistics() -> Outcome {
    let mut r = rng(9);
    let n = 200;
    let x = Tensor64::from_fn(&[n], |i| 1.0 + i as f64);
    let mut total = 0.0;
    for _ in 0..10_000 {
        let out = augment_mask(&x, 0.1, 0.5, &mut r).map_err(err)?;
        let frac = out.data().iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        check((0.10..=0.50).contains(&frac), || format!("zero fraction {frac}"))?;
        total += frac;
    }
    let mean = total / 10_000.0;
    check((mean - 0.30).abs() <= 0.02, || format!("mean zero fraction {mean}"))?;
    let mut rates = Vec::new();
    for p in [0.7, 0.9] {
        let cfg = AugmentConfig {
            p_aug: p,
            ..Default::default()
        };
        let (mut basic, mut masked) = (0usize, 0usize);
        for _ in 0..10_000 {
            let plan = AugmentPlan::draw(&x, &cfg, &mut r).map_err(err)?;
            basic += plan.negate as usize;
            masked += (!plan.spans.is_empty()) as usize;
        }
        for count in [basic, masked] {
            let rate = count as f64 / 10_000.0;
            check((rate - p).abs() <= 0.02, || format!("P(Aug)={p}: rate {rate}"))?;
            rates.push(rate);
        }
    }
    Ok(format!("mean zero fraction {mean:.4}; rates {rates:.3?} for P(Aug) 0.7 and 0.9"))
}

fn write_config(cfg: &Config, dir: &Path) -> Result<String, String> {
    let path = dir.join("run.cfg");
    std::fs::write(&path, cfg.to_toml()).map_err(err)?;
    Ok(path.to_str().expect("utf-8 path").to_string())
}

fn blur_sweep_mechanics() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = quick(toy_setup(dir.path(), 2)?);
    check(cfg.experiment.blur_sweep == [0, 41, 91, 191], || format!("sweep {:?}", cfg.experiment.blur_sweep))?;
    let cfg_path = write_config(&cfg, dir.path())?;
    let out = dir.path().join("results");
    psl(&["blur-sweep", "--config", &cfg_path, "--out", out.to_str().expect("utf-8")])?;
    let csv = std::fs::read_to_string(out.join("folds.csv")).map_err(err)?;
    for k in [0, 41, 91, 191] {
        let rows = csv.lines().skip(1).filter(|l| l.ends_with(&format!(",{k}"))).count();
        check(rows == 2, || format!("k={k}: {rows} rows"))?;
    }
    let samples = load_samples(&cfg, Modality::Fused, 0).map_err(err)?;
    for frame in samples.iter().flat_map(|s| s.rgb.iter().chain(s.thermal.iter()).flatten()) {
        let same = gaussian_blur(frame, 0).map_err(err)?;
        let bits = |t: &Tensor32| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        check(bits(&same) == bits(frame), || "k=0 changed a frame".into())?;
    }
    Ok("k = 0, 41, 91, 191 each wrote 2 fold rows; k = 0 is bit-identity".into())
}

fn fusion_variants() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = quick(toy_setup(dir.path(), 2)?);
    let cfg_path = write_config(&cfg, dir.path())?;
    let out = dir.path().join("results");
    let stdout = psl(&["fuse-eval", "--config", &cfg_path, "--out", out.to_str().expect("utf-8")])?;
    let csv = std::fs::read_to_string(out.join("folds.csv")).map_err(err)?;
    for mode in ["NONE", "W2", "W3"] {
        let rows = csv.lines().filter(|l| l.contains(&format!(",FUSED,{mode},"))).count();
        check(rows == 2, || format!("{mode}: {rows} rows"))?;
    }
    check(stdout.contains("identical predictions"), || "equivalence line missing".into())?;

    // The same check in-process, with the trainable-encoder settings of the toy config.
    let mut full = toy_setup(dir.path(), 2)?;
    full.seed = 11;
    let samples = load_samples(&full, Modality::Fused, 0).map_err(err)?;
    let eq = check_rgb_equivalence(&full, &samples).map_err(err)?;
    check(eq.identical_predictions == eq.videos && eq.identical_logits == eq.videos, || format!("{eq:?}"))?;
    Ok(format!("NONE/W2/W3 ran; W2(1, 0) matches RGB-only on {}/{} videos", eq.identical_predictions, eq.videos))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient suite", gradient_suite),
        ("wave-mechanism oracle", wave_oracle),
        ("WGAN-GP analytic cases", wgan_gp_cases),
        ("PatchGAN locality", patchgan_locality),
        ("parameter and FLOP accounting", size_accounting),
        ("LOSO protocol", loso_protocol),
        ("toy end-to-end learning", toy_learning),
        ("toy GAN", toy_gan),
        ("augmentation statistics", augmentation_statistics),
        ("blur sweep mechanics", blur_sweep_mechanics),
        ("fusion variants", fusion_variants),
    ];
    // `cargo test -- --list` and name filters pass arguments; run everything regardless
    // but honour listing so test discovery tools work.
    if std::env::args().any(|a| a == "--list") {
        for (i, (name, _)) in criteria.iter().enumerate() {
            println!("criterion {}: {name}: test", i + 1);
        }
        return;
    }
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

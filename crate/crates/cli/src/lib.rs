//! The `psl` command line. [`run`] parses arguments, dispatches a subcommand and
//! maps its outcome to an exit code.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use psl_core::{checkpoint, Error, ParamStore32, Result, Tensor32};
use psl_eval::config::Config;
use psl_eval::counts::{analytic_counts, measured_counts, reference, PipelineCounts};
use psl_eval::data::probe::{logistic_probe, mean_colour_features};
use psl_eval::data::{generate_toy_dataset, list_frames, load_frame, save_frame};
use psl_eval::experiment::{
    check_rgb_equivalence, load_samples, run_blur_sweep, run_from_config, run_fusion_sweep, train_all, write_results,
    ExperimentRun, RunSpec,
};
use psl_eval::gradsuite::run_gradient_suite;
use psl_eval::metrics::compute_metrics;
use psl_eval::FoldResult;
use psl_models::gan::{toy_color_pairs, translate_video, GanBundle, Generator};
use psl_models::{Modality, PainLabel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

pub const EXIT_OK: i32 = 0;
/// Contract, configuration or numerical failure.
pub const EXIT_FAILURE: i32 = 1;
/// Missing or unreadable files.
pub const EXIT_IO: i32 = 2;
/// Unknown subcommand or flag.
pub const EXIT_USAGE: i32 = 64;

/// Largest relative gradient error accepted by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "psl", version, about = "Pain assessment from RGB and synthetic thermal video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Config file (TOML). Built-in toy settings are used when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic paired RGB/thermal dataset and its manifest.
    GenToyData(Common),
    /// Train the RGB-to-thermal translator on solid-colour pairs.
    TrainGan(Common),
    /// Translate a directory of RGB frames with a trained generator.
    Translate {
        #[command(flatten)]
        common: Common,
        /// Generator checkpoint written by `train-gan`.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Directory of RGB `.ppm` frames.
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
    },
    /// Train one model on every subject and save its parameters.
    Train(Common),
    /// Leave-one-subject-out evaluation.
    Loso(Common),
    /// LOSO evaluation for each blur kernel size in the config.
    BlurSweep(Common),
    /// LOSO evaluation for each fusion mode, plus the RGB reduction check.
    FuseEval(Common),
    /// Parameter counts of the configured pipeline.
    CountParams(Common),
    /// FLOP counts of the configured pipeline.
    CountFlops(Common),
    /// Gradient check of every differentiable operation and block.
    Gradcheck(Common),
    /// Recompute and print metrics from a results directory.
    Metrics {
        #[command(flatten)]
        common: Common,
        /// Directory holding `summary.json`; defaults to `--out` or `results`.
        #[arg(long, value_name = "DIR")]
        results: Option<PathBuf>,
    },
}

/// Runs the command line and returns its exit code, printing to stdout.
pub fn run<I, A>(argv: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    run_with_output(argv, &mut std::io::stdout())
}

/// As [`run`], with command output sent to `out`.
pub fn run_with_output<I, A>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        EXIT_IO
    } else {
        EXIT_FAILURE
    }
}

fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(write_err)?
    };
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::GenToyData(c) => gen_toy_data(&c, out),
        Command::TrainGan(c) => train_gan(&c, out),
        Command::Translate { common, checkpoint, input } => translate(&common, &checkpoint, &input, out),
        Command::Train(c) => train(&c, out),
        Command::Loso(c) => loso(&c, out),
        Command::BlurSweep(c) => blur_sweep(&c, out),
        Command::FuseEval(c) => fuse_eval(&c, out),
        Command::CountParams(c) => count_params(&c, out),
        Command::CountFlops(c) => count_flops(&c, out),
        Command::Gradcheck(_) => gradcheck(out),
        Command::Metrics { common, results } => metrics(&common, results, out),
    }
}

fn gen_toy_data(common: &Common, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(common)?;
    // Without --out the data lands where the config expects its manifest.
    let dir = match &common.out {
        Some(d) => d.clone(),
        None => cfg.data.manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let mut spec = cfg.toy.clone();
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let manifest = generate_toy_dataset(&spec, &dir)?;
    say!(out, "wrote {} manifest rows to {}", manifest.records.len(), dir.join("manifest.csv").display());
    let (features, labels) = mean_colour_features(&manifest, Modality::Rgb)?;
    let top = *labels.iter().max().unwrap_or(&PainLabel::Np);
    let targets: Vec<bool> = labels.iter().map(|&l| l == top).collect();
    let acc = logistic_probe(&features, &targets, 2000, 0.5);
    say!(out, "mean-colour probe accuracy ({top} vs rest): {:.4}", acc);
    Ok(EXIT_OK)
}

fn train_gan(common: &Common, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, "results/gan");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let gan_cfg = cfg.gan.model()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (src, dst): (Tensor32, Tensor32) = toy_color_pairs(cfg.gan.pairs, cfg.gan.image_size, &mut rng);
    let mut bundle = GanBundle::<f32>::new(&gan_cfg, &mut rng)?;
    let initial = bundle.mae(&src, &dst)?;
    let mut log = String::from("step,loss_d,loss_g,penalty\n");
    for step in 0..cfg.gan.steps {
        let r = bundle.train_step(&src, &dst, &mut rng)?;
        log.push_str(&format!("{},{:.6},{:.6},{:.6}\n", step + 1, r.loss_d, r.loss_g, r.penalty));
    }
    let last = bundle.mae(&src, &dst)?;
    let log_path = dir.join("gan_log.csv");
    fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
    checkpoint::save(&bundle.gen_params, &dir.join("generator.pslb"))?;
    say!(out, "steps: {}", cfg.gan.steps);
    say!(out, "MAE before: {initial:.6}");
    say!(out, "MAE after: {last:.6}");
    say!(out, "MAE reduction: {:.2}%", 100.0 * (1.0 - last / initial));
    say!(out, "generator saved to {}", dir.join("generator.pslb").display());
    Ok(EXIT_OK)
}

fn translate(common: &Common, ckpt: &Path, input: &Path, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, "results/translated");
    let mut store = ParamStore32::new();
    let generator = Generator::new(&cfg.gan.model()?, &mut store, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    checkpoint::restore_into(&mut store, &checkpoint::load(ckpt)?)?;
    let paths = list_frames(input)?;
    let frames: Vec<Tensor32> = paths.iter().map(|p| load_frame(p)).collect::<Result<_>>()?;
    let translated = translate_video(&generator, &store, &frames)?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (path, frame) in paths.iter().zip(&translated) {
        save_frame(frame, &dir.join(path.file_name().expect("frame files have names")))?;
    }
    say!(out, "translated {} frames into {}", translated.len(), dir.display());
    Ok(EXIT_OK)
}

fn train(common: &Common, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, "results/train");
    let spec = RunSpec::from_config(&cfg);
    let samples = load_samples(&cfg, spec.modality, spec.blur_k)?;
    let (store, summary) = train_all(&cfg, spec, &samples)?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    checkpoint::save(&store, &dir.join("model.pslb"))?;
    let json_path = dir.join("train.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    say!(
        out,
        "trained on {} videos for {} epochs: train accuracy {:.4}, final loss {:.6}",
        summary.n_train,
        summary.epochs,
        summary.train_accuracy,
        summary.final_train_loss
    );
    Ok(EXIT_OK)
}

fn print_run(out: &mut dyn Write, run: &ExperimentRun) -> Result<()> {
    let r = &run.report;
    say!(
        out,
        "{} {} fusion={} blur_k={}: accuracy {:.4} (fold mean {:.4}), recall {:.4}, F1 {:.4} over {} videos",
        run.task,
        run.modality,
        run.fusion,
        run.blur_k,
        r.accuracy,
        r.accuracy_fold_mean,
        r.recall_macro,
        r.f1_macro,
        r.n_samples
    );
    Ok(())
}

fn finish_runs(out: &mut dyn Write, dir: &Path, runs: &[ExperimentRun]) -> Result<()> {
    write_results(dir, runs)?;
    for run in runs {
        print_run(out, run)?;
    }
    say!(out, "results written to {}", dir.display());
    Ok(())
}

fn loso(common: &Common, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(common)?;
    let run = run_from_config(&cfg, RunSpec::from_config(&cfg))?;
    for f in &run.folds {
        say!(
            out,
            "fold {}: {}/{} correct, train accuracy {:.4}",
            f.subject_id,
            f.n_correct,
            f.n_test,
            f.train_accuracy
        );
    }
    finish_runs(out, &out_dir(common, "results"), &[run])?;
    Ok(EXIT_OK)
}

fn blur_sweep(common: &Common, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(common)?;
    let runs = run_blur_sweep(&cfg)?;
    finish_runs(out, &out_dir(common, "results/blur"), &runs)?;
    Ok(EXIT_OK)
}

fn fuse_eval(common: &Common, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, "results/fusion");
    let runs = run_fusion_sweep(&cfg)?;
    finish_runs(out, &dir, &runs)?;
    let samples = load_samples(&cfg, Modality::Fused, cfg.experiment.blur_k)?;
    let eq = check_rgb_equivalence(&cfg, &samples)?;
    let path = dir.join("rgb_equivalence.json");
    fs::write(&path, serde_json::to_string_pretty(&eq).expect("serializes") + "\n").map_err(|e| Error::io(&path, e))?;
    say!(
        out,
        "W2 with w1=1, w2=0 vs RGB only: {}/{} identical predictions, {}/{} identical logits",
        eq.identical_predictions,
        eq.videos,
        eq.identical_logits,
        eq.videos
    );
    if eq.identical_predictions != eq.videos {
        return Err(Error::contract("fused pipeline with weights (1, 0) differs from the RGB pipeline"));
    }
    Ok(EXIT_OK)
}

fn counts(common: &Common) -> Result<(Config, PipelineCounts)> {
    let cfg = load_config(common)?;
    let (modality, fusion) = (cfg.experiment.modality, cfg.experiment.fusion);
    let analytic = analytic_counts(&cfg, modality, fusion)?;
    let measured = measured_counts(&cfg, modality, fusion)?;
    if analytic != measured {
        return Err(Error::contract(format!(
            "closed-form counts {analytic:?} disagree with the built model {measured:?}"
        )));
    }
    Ok((cfg, analytic))
}

fn count_params(common: &Common, out: &mut dyn Write) -> Result<i32> {
    let (cfg, c) = counts(common)?;
    say!(out, "pipeline: {} fusion={}", cfg.experiment.modality, cfg.experiment.fusion);
    say!(out, "backbone params: {} (reference {:.2} M)", c.backbone_params, reference::BACKBONE_PARAMS / 1e6);
    say!(out, "temporal params: {} (reference {:.2} M)", c.temporal_params, reference::TEMPORAL_PARAMS / 1e6);
    say!(out, "fusion params: {}", c.fusion_params);
    say!(out, "total params: {}", c.total_params());
    say!(out, "Params: {:.2} Millions", c.total_params() as f64 / 1e6);
    say!(out, "reference: Params: {:.2} Millions", reference::TOTAL_PARAMS / 1e6);
    say!(out, "closed form matches the built model");
    Ok(EXIT_OK)
}

fn count_flops(common: &Common, out: &mut dyn Write) -> Result<i32> {
    let (cfg, c) = counts(common)?;
    let giga = |v: u64| v as f64 / 1e9;
    say!(out, "pipeline: {} fusion={} frames={}", cfg.experiment.modality, cfg.experiment.fusion, cfg.data.frames);
    say!(out, "backbone FLOPs per frame: {}", c.backbone_flops_per_frame);
    say!(
        out,
        "backbone FLOPs per video: {} ({:.2} G, reference {:.2} G)",
        c.backbone_flops_per_video,
        giga(c.backbone_flops_per_video),
        reference::BACKBONE_FLOPS / 1e9
    );
    say!(
        out,
        "temporal FLOPs: {} ({:.2} G, reference {:.2} G)",
        c.temporal_flops,
        giga(c.temporal_flops),
        reference::TEMPORAL_FLOPS / 1e9
    );
    say!(out, "total FLOPs: {}", c.total_flops());
    say!(out, "FLOPS: {:.2} Giga", giga(c.total_flops()));
    say!(out, "reference: FLOPS: {:.2} Giga", reference::TOTAL_FLOPS / 1e9);
    say!(out, "closed form matches the built model");
    Ok(EXIT_OK)
}

fn gradcheck(out: &mut dyn Write) -> Result<i32> {
    let cases = run_gradient_suite()?;
    let mut worst = 0.0f64;
    for c in &cases {
        say!(out, "{:<28} {:.3e}", c.name, c.max_rel_err);
        worst = worst.max(c.max_rel_err);
    }
    say!(out, "max relative error: {worst:.3e} over {} checks", cases.len());
    Ok(if worst < GRADCHECK_TOLERANCE { EXIT_OK } else { EXIT_FAILURE })
}

#[derive(Deserialize)]
struct Summary {
    runs: Vec<ExperimentRun>,
}

fn metrics(common: &Common, results: Option<PathBuf>, out: &mut dyn Write) -> Result<i32> {
    let dir = results.unwrap_or_else(|| out_dir(common, "results"));
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let summary: Summary = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        offset: byte_offset(&text, e.line(), e.column()),
        msg: e.to_string(),
    })?;
    for run in &summary.runs {
        let folds: Vec<FoldResult> = run
            .folds
            .iter()
            .map(|f| FoldResult {
                subject_id: f.subject_id.clone(),
                task: run.task,
                confusion: f.confusion.clone(),
            })
            .collect();
        let report = compute_metrics(&folds)?;
        if report != run.report {
            return Err(Error::contract(format!(
                "stored metrics of the {} {} run differ from a recount of its folds",
                run.modality, run.fusion
            )));
        }
        print_run(out, run)?;
        for (label, scores) in run.task.labels().iter().zip(&report.per_class) {
            say!(
                out,
                "  {label}: support {}, recall {:.4}, precision {:.4}, F1 {:.4}",
                scores.support,
                scores.recall,
                scores.precision,
                scores.f1
            );
        }
    }
    Ok(EXIT_OK)
}

/// Byte offset of a 1-based line and column.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    start + column.saturating_sub(1)
}

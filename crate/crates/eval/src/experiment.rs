//! Leave-one-subject-out training and evaluation of the full pipeline, and the
//! files it leaves behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use psl_core::optim::{lr_at, AdamW, AdamWConfig};
use psl_core::{Bound, Error, ParamStore, ParamStore32, Result, Scalar, Tape, Tensor, Tensor32, Var};
use psl_models::fusion::concat_frame_vars;
use psl_models::{AugmentPlan, Backbone, FusionMode, FusionWeights, Modality, PainLabel, TemporalTransformer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::{list_frames, load_video, FramePrep, Manifest, ManifestRecord};
use crate::loso::{loso_folds, Fold};
use crate::loss::cross_entropy;
use crate::metrics::{compute_metrics, macro_scores, FoldResult, MetricsReport, Task};

/// One video with its frames prepared for the frame encoder.
#[derive(Clone, Debug)]
pub struct VideoSample {
    pub subject_id: String,
    pub video_id: String,
    pub label: PainLabel,
    /// Class index under the experiment's task.
    pub class: usize,
    pub rgb: Option<Vec<Tensor32>>,
    pub thermal: Option<Vec<Tensor32>>,
}

/// Which streams a modality reads: `(rgb, thermal)`.
pub fn streams(modality: Modality) -> (bool, bool) {
    match modality {
        Modality::Rgb => (true, false),
        Modality::Thermal => (false, true),
        Modality::Fused => (true, true),
    }
}

/// Loads every video the task uses, sorted by subject and video id.
///
/// Before reading any pixels, checks that each needed frame directory exists and
/// holds frames; all missing paths are reported together.
pub fn load_samples(cfg: &Config, modality: Modality, blur_k: usize) -> Result<Vec<VideoSample>> {
    let manifest = Manifest::load(&cfg.data.manifest)?;
    let task = cfg.experiment.task;
    let (want_rgb, want_thermal) = streams(modality);
    if want_rgb && want_thermal {
        manifest.check_pairing()?;
    }
    let mut videos: BTreeMap<(String, String), [Option<&ManifestRecord>; 2]> = BTreeMap::new();
    for r in manifest.records.iter().filter(|r| task.class_of(r.label).is_some()) {
        let slot = usize::from(r.modality == Modality::Thermal);
        videos.entry((r.subject_id.clone(), r.video_id.clone())).or_default()[slot] = Some(r);
    }
    let mut missing = Vec::new();
    for ((s, v), pair) in &videos {
        for (slot, wanted, name) in [(0, want_rgb, "RGB"), (1, want_thermal, "THERMAL")] {
            if !wanted {
                continue;
            }
            match pair[slot] {
                None => missing.push(format!("{s}/{v}: no {name} row")),
                Some(r) => {
                    let dir = manifest.frame_dir(r);
                    if !list_frames(&dir).is_ok_and(|f| !f.is_empty()) {
                        missing.push(dir.display().to_string());
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::io(
            &cfg.data.manifest,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("missing modality files: {}", missing.join(", "))),
        ));
    }
    if videos.is_empty() {
        return Err(Error::config(format!("manifest {} has no {task} videos", cfg.data.manifest.display())));
    }
    let prep = FramePrep {
        frames: cfg.data.frames,
        size: cfg.backbone.image_size,
        blur_k,
    };
    let entries: Vec<_> = videos.into_iter().collect();
    entries
        .par_iter()
        .map(|((subject, video), pair)| {
            let load = |r: Option<&ManifestRecord>, wanted: bool| -> Result<Option<Vec<Tensor32>>> {
                match (r, wanted) {
                    (Some(r), true) => load_video(&manifest.frame_dir(r), r.bbox, prep).map(Some),
                    _ => Ok(None),
                }
            };
            let any = pair[0].or(pair[1]).expect("every entry has a row");
            Ok(VideoSample {
                subject_id: subject.clone(),
                video_id: video.clone(),
                label: any.label,
                class: task.class_of(any.label).expect("filtered by task"),
                rgb: load(pair[0], want_rgb)?,
                thermal: load(pair[1], want_thermal)?,
            })
        })
        .collect()
}

/// Frame encoder, optional fusion and temporal classifier.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub modality: Modality,
    pub backbone: Backbone,
    pub fusion: Option<FusionWeights>,
    pub temporal: TemporalTransformer,
}

impl Pipeline {
    /// Registers parameters under `backbone.`, `fusion.` and `temporal.`. The fusion
    /// weights draw nothing from `rng`, so pipelines built from the same seed share
    /// their encoder and classifier whatever the modality.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        cfg: &Config,
        modality: Modality,
        fusion: FusionMode,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let backbone = Backbone::new(&cfg.backbone.model(), store, "backbone", rng)?;
        let fusion = match modality {
            Modality::Fused => Some(FusionWeights::new(store, "fusion", fusion)?),
            _ => None,
        };
        let temporal = TemporalTransformer::new(&cfg.temporal_model(), store, "temporal", rng)?;
        Ok(Self {
            modality,
            backbone,
            fusion,
            temporal,
        })
    }

    /// Frame embeddings of one video, concatenated in frame order: `[M·C]`.
    pub fn embed_video<'t, T: Scalar>(&self, tape: &'t Tape<T>, p: &Bound<'t, T>, frames: &[Tensor<T>]) -> Result<Var<'t, T>> {
        let embedded: Vec<Var<'t, T>> = frames
            .iter()
            .map(|f| self.backbone.forward(p, tape.constant(f.clone())))
            .collect::<Result<_>>()?;
        concat_frame_vars(&embedded)
    }

    /// The video vector the temporal module sees.
    pub fn combine<'t, T: Scalar>(&self, p: &Bound<'t, T>, rgb: Option<Var<'t, T>>, thermal: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let need = |v: Option<Var<'t, T>>, name: &str| {
            v.ok_or_else(|| Error::contract(format!("{} pipeline needs the {name} stream", self.modality)))
        };
        match (&self.fusion, self.modality) {
            (Some(w), _) => w.fuse(p, need(rgb, "RGB")?, need(thermal, "THERMAL")?),
            (None, Modality::Thermal) => need(thermal, "THERMAL"),
            (None, _) => need(rgb, "RGB"),
        }
    }

    /// Class scores of a video from its frames.
    pub fn video_logits<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        p: &Bound<'t, T>,
        rgb: Option<&[Tensor<T>]>,
        thermal: Option<&[Tensor<T>]>,
    ) -> Result<Var<'t, T>> {
        let (want_rgb, want_thermal) = streams(self.modality);
        let rgb = match rgb.filter(|_| want_rgb) {
            Some(f) => Some(self.embed_video(tape, p, f)?),
            None => None,
        };
        let thermal = match thermal.filter(|_| want_thermal) {
            Some(f) => Some(self.embed_video(tape, p, f)?),
            None => None,
        };
        self.temporal.logits(p, self.combine(p, rgb, thermal)?)
    }

    /// Predicted class of a video with the parameters in `store`.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, rgb: Option<&[Tensor<T>]>, thermal: Option<&[Tensor<T>]>) -> Result<usize> {
        let tape = Tape::new();
        let p = store.bind_constants(&tape);
        Ok(self.video_logits(&tape, &p, rgb, thermal)?.tensor().argmax())
    }
}

/// Per-fold figures kept in the summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub subject_id: String,
    pub n_train: usize,
    pub n_test: u64,
    pub n_correct: u64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub train_accuracy: f64,
    pub final_train_loss: f64,
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub task: Task,
    pub modality: String,
    pub fusion: String,
    pub blur_k: usize,
    pub seed: u64,
    pub epochs: usize,
    pub report: MetricsReport,
    pub folds: Vec<FoldSummary>,
}

/// Settings that vary between runs of one sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSpec {
    pub modality: Modality,
    pub fusion: FusionMode,
    pub blur_k: usize,
}

impl RunSpec {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            modality: cfg.experiment.modality,
            fusion: cfg.experiment.fusion,
            blur_k: cfg.experiment.blur_k,
        }
    }
}

/// Frozen-encoder embeddings of one video, or nothing when the encoder trains.
type Cached = (Option<Tensor32>, Option<Tensor32>);

fn cache_embeddings(pipeline: &Pipeline, store: &ParamStore32, samples: &[VideoSample]) -> Result<Vec<Cached>> {
    samples
        .iter()
        .map(|s| {
            let tape = Tape::new();
            let p = store.bind_constants(&tape);
            let (want_rgb, want_thermal) = streams(pipeline.modality);
            let embed = |frames: &Option<Vec<Tensor32>>, wanted: bool| -> Result<Option<Tensor32>> {
                match frames {
                    Some(f) if wanted => Ok(Some(pipeline.embed_video(&tape, &p, f)?.tensor())),
                    _ => Ok(None),
                }
            };
            Ok((embed(&s.rgb, want_rgb)?, embed(&s.thermal, want_thermal)?))
        })
        .collect()
}

struct Trained {
    store: ParamStore32,
    pipeline: Pipeline,
    cache: Option<Vec<Cached>>,
    final_loss: f64,
}

impl Trained {
    /// The video vector of sample `i`, from cached embeddings when the encoder is frozen.
    fn video<'t>(&self, tape: &'t Tape<f32>, p: &Bound<'t, f32>, samples: &[VideoSample], i: usize) -> Result<Var<'t, f32>> {
        let (rgb, thermal) = match &self.cache {
            Some(cache) => {
                let constant = |t: &Option<Tensor32>| t.as_ref().map(|t| tape.constant(t.clone()));
                (constant(&cache[i].0), constant(&cache[i].1))
            }
            None => {
                let (want_rgb, want_thermal) = streams(self.pipeline.modality);
                let embed = |frames: &Option<Vec<Tensor32>>, wanted: bool| match frames {
                    Some(f) if wanted => self.pipeline.embed_video(tape, p, f).map(Some),
                    _ => Ok(None),
                };
                (embed(&samples[i].rgb, want_rgb)?, embed(&samples[i].thermal, want_thermal)?)
            }
        };
        self.pipeline.combine(p, rgb, thermal)
    }

    fn predict(&self, samples: &[VideoSample], i: usize) -> Result<usize> {
        let tape = Tape::new();
        let p = self.store.bind_constants(&tape);
        let video = self.video(&tape, &p, samples, i)?;
        Ok(self.pipeline.temporal.logits(&p, video)?.tensor().argmax())
    }
}

/// The random stream owned by fold `index`.
fn fold_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn train_fold(cfg: &Config, spec: RunSpec, samples: &[VideoSample], train: &[usize], rng: &mut ChaCha8Rng) -> Result<Trained> {
    let mut store = ParamStore32::new();
    let pipeline = Pipeline::new(cfg, spec.modality, spec.fusion, &mut store, rng)?;
    let cache = if cfg.backbone.trainable {
        None
    } else {
        store.set_frozen("backbone", true);
        Some(cache_embeddings(&pipeline, &store, samples)?)
    };
    let mut trained = Trained {
        store,
        pipeline,
        cache,
        final_loss: f64::NAN,
    };
    let aug = cfg.augment.model();
    let batch = cfg.optim.batch_size;
    let steps_per_epoch = train.len().div_ceil(batch);
    let schedule = cfg.schedule(steps_per_epoch);
    let mut opt = AdamW::new(
        &trained.store,
        AdamWConfig {
            weight_decay: cfg.optim.weight_decay,
            ..Default::default()
        },
    );
    let mut order = train.to_vec();
    for epoch in 0..cfg.experiment.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for (step, chunk) in order.chunks(batch).enumerate() {
            let tape = Tape::new();
            let p = trained.store.bind(&tape);
            let mut total: Option<Var<'_, f32>> = None;
            for &i in chunk {
                let video = trained.video(&tape, &p, samples, i)?;
                let plan = AugmentPlan::draw(&video.value(), &aug, rng)?;
                let logits = trained.pipeline.temporal.logits(&p, plan.apply_var(video)?)?;
                let loss = cross_entropy(logits, samples[i].class)?;
                total = Some(match total {
                    Some(t) => t.add(loss)?,
                    None => loss,
                });
            }
            let loss = total.expect("non-empty batch").scale(1.0 / chunk.len() as f64)?;
            let value = loss.item()?.as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite { op: "training loss" });
            }
            epoch_loss += value * chunk.len() as f64;
            let grads = p.grads(&tape.backward(loss)?);
            opt.step(&mut trained.store, &grads, lr_at(step, epoch, &schedule))?;
        }
        trained.final_loss = epoch_loss / order.len() as f64;
        log::debug!("epoch {}/{}: loss {:.4}", epoch + 1, cfg.experiment.epochs, trained.final_loss);
    }
    Ok(trained)
}

fn run_one_fold(cfg: &Config, spec: RunSpec, samples: &[VideoSample], fold: &Fold, index: usize) -> Result<(FoldResult, FoldSummary)> {
    let mut rng = fold_rng(cfg.seed, index);
    let trained = train_fold(cfg, spec, samples, &fold.train, &mut rng)?;
    let task = cfg.experiment.task;
    let mut result = FoldResult::new(&fold.subject_id, task);
    for &i in &fold.test {
        result.record(samples[i].class, trained.predict(samples, i)?);
    }
    let mut train_correct = 0usize;
    for &i in &fold.train {
        train_correct += usize::from(trained.predict(samples, i)? == samples[i].class);
    }
    let scores = macro_scores(&result.confusion);
    let summary = FoldSummary {
        subject_id: fold.subject_id.clone(),
        n_train: fold.train.len(),
        n_test: result.n_test(),
        n_correct: result.n_correct(),
        recall_macro: scores.recall,
        f1_macro: scores.f1,
        train_accuracy: train_correct as f64 / fold.train.len().max(1) as f64,
        final_train_loss: trained.final_loss,
        confusion: result.confusion.clone(),
    };
    log::info!(
        "fold {}: {}/{} held-out correct, train accuracy {:.4}",
        summary.subject_id,
        summary.n_correct,
        summary.n_test,
        summary.train_accuracy
    );
    Ok((result, summary))
}

/// Summary of a model trained on every sample, with no held-out subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullTraining {
    pub task: Task,
    pub modality: String,
    pub fusion: String,
    pub blur_k: usize,
    pub seed: u64,
    pub epochs: usize,
    pub n_train: usize,
    pub train_accuracy: f64,
    pub final_train_loss: f64,
}

/// Trains one model on all samples using random stream 0 (folds use 1 and up) and
/// returns its parameters with a summary.
pub fn train_all(cfg: &Config, spec: RunSpec, samples: &[VideoSample]) -> Result<(ParamStore32, FullTraining)> {
    cfg.validate()?;
    let all: Vec<usize> = (0..samples.len()).collect();
    if all.is_empty() {
        return Err(Error::config("no samples to train on"));
    }
    let trained = train_fold(cfg, spec, samples, &all, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let mut correct = 0usize;
    for &i in &all {
        correct += usize::from(trained.predict(samples, i)? == samples[i].class);
    }
    let summary = FullTraining {
        task: cfg.experiment.task,
        modality: spec.modality.to_string(),
        fusion: fusion_label(spec),
        blur_k: spec.blur_k,
        seed: cfg.seed,
        epochs: cfg.experiment.epochs,
        n_train: all.len(),
        train_accuracy: correct as f64 / all.len() as f64,
        final_train_loss: trained.final_loss,
    };
    Ok((trained.store, summary))
}

fn fusion_label(spec: RunSpec) -> String {
    match spec.modality {
        Modality::Fused => spec.fusion.to_string(),
        _ => "-".into(),
    }
}

/// Trains and evaluates one model per held-out subject. Folds run in parallel and
/// each owns its model, optimizer and random stream, so the result depends only on
/// the config and seed.
pub fn run_experiment(cfg: &Config, spec: RunSpec, samples: &[VideoSample]) -> Result<ExperimentRun> {
    cfg.validate()?;
    let subjects: Vec<&str> = samples.iter().map(|s| s.subject_id.as_str()).collect();
    let folds = loso_folds(&subjects)?;
    let outcomes: Vec<(FoldResult, FoldSummary)> = folds
        .par_iter()
        .enumerate()
        .map(|(i, fold)| run_one_fold(cfg, spec, samples, fold, i))
        .collect::<Result<_>>()?;
    let (results, summaries): (Vec<FoldResult>, Vec<FoldSummary>) = outcomes.into_iter().unzip();
    Ok(ExperimentRun {
        task: cfg.experiment.task,
        modality: spec.modality.to_string(),
        fusion: fusion_label(spec),
        blur_k: spec.blur_k,
        seed: cfg.seed,
        epochs: cfg.experiment.epochs,
        report: compute_metrics(&results)?,
        folds: summaries,
    })
}

/// Loads the data for `spec` and runs the experiment.
pub fn run_from_config(cfg: &Config, spec: RunSpec) -> Result<ExperimentRun> {
    let samples = load_samples(cfg, spec.modality, spec.blur_k)?;
    run_experiment(cfg, spec, &samples)
}

/// One experiment per blur kernel size, on both streams as configured.
pub fn run_blur_sweep(cfg: &Config) -> Result<Vec<ExperimentRun>> {
    cfg.experiment
        .blur_sweep
        .iter()
        .map(|&k| {
            run_from_config(
                cfg,
                RunSpec {
                    blur_k: k,
                    ..RunSpec::from_config(cfg)
                },
            )
        })
        .collect()
}

/// One fused experiment per configured fusion mode, sharing the loaded frames.
pub fn run_fusion_sweep(cfg: &Config) -> Result<Vec<ExperimentRun>> {
    let base = RunSpec {
        modality: Modality::Fused,
        ..RunSpec::from_config(cfg)
    };
    let samples = load_samples(cfg, Modality::Fused, base.blur_k)?;
    cfg.fusion_modes()?
        .into_iter()
        .map(|fusion| run_experiment(cfg, RunSpec { fusion, ..base }, &samples))
        .collect()
}

/// Outcome of comparing a W2 pipeline with weights (1, 0) against the RGB-only
/// pipeline that shares its parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RgbEquivalence {
    pub videos: usize,
    pub identical_predictions: usize,
    pub identical_logits: usize,
}

/// Builds both pipelines from the config seed, pins the fused weights to (1, 0), and
/// compares their outputs on every sample.
pub fn check_rgb_equivalence(cfg: &Config, samples: &[VideoSample]) -> Result<RgbEquivalence> {
    let mut fused_store = ParamStore32::new();
    let fused = Pipeline::new(cfg, Modality::Fused, FusionMode::W2, &mut fused_store, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let weights = fused.fusion.as_ref().expect("fused pipeline has weights");
    fused_store.set(weights.w1.expect("w1"), Tensor::ones(&[1]))?;
    fused_store.set(weights.w2.expect("w2"), Tensor::zeros(&[1]))?;

    let mut rgb_store = ParamStore32::new();
    let rgb = Pipeline::new(cfg, Modality::Rgb, FusionMode::None, &mut rgb_store, &mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)))?;
    for id in rgb_store.ids().collect::<Vec<_>>() {
        let name = rgb_store.name(id).to_string();
        let src = fused_store.id(&name).ok_or_else(|| Error::contract(format!("fused pipeline lacks `{name}`")))?;
        rgb_store.set(id, fused_store.get(src).clone())?;
    }

    let mut out = RgbEquivalence {
        videos: samples.len(),
        identical_predictions: 0,
        identical_logits: 0,
    };
    for s in samples {
        let logits = |pipe: &Pipeline, store: &ParamStore32| -> Result<Tensor32> {
            let tape = Tape::new();
            let p = store.bind_constants(&tape);
            Ok(pipe.video_logits(&tape, &p, s.rgb.as_deref(), s.thermal.as_deref())?.tensor())
        };
        let (a, b) = (logits(&fused, &fused_store)?, logits(&rgb, &rgb_store)?);
        out.identical_predictions += usize::from(a.argmax() == b.argmax());
        out.identical_logits += usize::from(a == b);
    }
    Ok(out)
}

pub const FOLDS_HEADER: [&str; 9] = [
    "subject_id",
    "task",
    "n_test",
    "n_correct",
    "recall_macro",
    "f1_macro",
    "modality",
    "fusion",
    "blur_k",
];

/// Writes `folds.csv` (one row per fold of every run) and `summary.json` under `dir`.
pub fn write_results(dir: &Path, runs: &[ExperimentRun]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("folds.csv");
    let csv_err = |e: csv::Error| Error::io(&csv_path, std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FOLDS_HEADER).map_err(csv_err)?;
    for run in runs {
        let mut folds: Vec<&FoldSummary> = run.folds.iter().collect();
        folds.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        for f in folds {
            w.write_record([
                f.subject_id.clone(),
                run.task.to_string(),
                f.n_test.to_string(),
                f.n_correct.to_string(),
                format!("{:.6}", f.recall_macro),
                format!("{:.6}", f.f1_macro),
                run.modality.clone(),
                run.fusion.clone(),
                run.blur_k.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::io(&csv_path, std::io::Error::other(e.to_string())))?;
    fs::write(&csv_path, bytes).map_err(|e| Error::io(&csv_path, e))?;

    let json_path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(&serde_json::json!({ "runs": runs })).expect("summary serializes");
    fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))
}

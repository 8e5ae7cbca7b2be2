//! The experiment configuration file: TOML with one table per concern. Every key
//! has a default, and the defaults describe the toy setup.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use psl_core::optim::ScheduleConfig;
use psl_core::{Error, Result};
use psl_models::gan::GanLoss;
use psl_models::{AugmentConfig, BackboneConfig, FusionMode, GanConfig, Modality, TemporalConfig};
use serde::{Deserialize, Serialize};

use crate::data::ToyDataSpec;
use crate::metrics::Task;

/// (De)serializes a value through its `Display`/`FromStr` names.
mod named {
    use super::*;
    use serde::{de, Deserializer, Serializer};

    pub fn serialize<S: Serializer, T: Display>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D, T>(d: D) -> std::result::Result<T, D::Error>
    where
        D: Deserializer<'de>,
        T: FromStr,
        T::Err: Display,
    {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub data: DataSection,
    pub toy: ToyDataSpec,
    pub backbone: BackboneSection,
    pub temporal: TemporalSection,
    pub experiment: ExperimentSection,
    pub optim: OptimSection,
    pub augment: AugmentSection,
    pub gan: GanSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Manifest CSV; relative paths resolve against the config file's directory.
    pub manifest: PathBuf,
    /// Frames sampled per video.
    pub frames: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("toy_data/manifest.csv"),
            frames: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    pub patch_size: usize,
    pub image_size: usize,
    pub stage_depths: [usize; 4],
    pub stage_dims: [usize; 4],
    pub downsample: [usize; 3],
    pub mlp_ratio: usize,
    /// Train the frame encoder with the rest of the pipeline. When false it stays at
    /// its seeded initialization and frame embeddings are computed once per fold.
    pub trainable: bool,
}

impl Default for BackboneSection {
    fn default() -> Self {
        Self {
            patch_size: 4,
            image_size: 16,
            stage_depths: [1, 1, 1, 1],
            stage_dims: [8, 8, 8, 8],
            downsample: [2, 2, 1],
            mlp_ratio: 2,
            trainable: false,
        }
    }
}

impl BackboneSection {
    pub fn model(&self) -> BackboneConfig {
        BackboneConfig {
            patch_size: self.patch_size,
            image_size: self.image_size,
            stage_depths: self.stage_depths,
            stage_dims: self.stage_dims,
            downsample: self.downsample,
            mlp_ratio: self.mlp_ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalSection {
    pub latents: usize,
    pub blocks: usize,
    pub self_heads: usize,
    pub cross_heads: usize,
    pub cross_head_dim: Option<usize>,
    pub out_dim: usize,
    pub sequential: bool,
}

impl Default for TemporalSection {
    fn default() -> Self {
        Self {
            latents: 8,
            blocks: 4,
            self_heads: 1,
            cross_heads: 8,
            cross_head_dim: Some(4),
            out_dim: 16,
            sequential: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(with = "named")]
    pub task: Task,
    #[serde(with = "named")]
    pub modality: Modality,
    #[serde(with = "named")]
    pub fusion: FusionMode,
    pub epochs: usize,
    pub blur_k: usize,
    /// Kernel sizes visited by the blur sweep.
    pub blur_sweep: Vec<usize>,
    /// Fusion modes visited by the fusion comparison.
    pub fusion_modes: Vec<String>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            task: Task::Binary,
            modality: Modality::Fused,
            fusion: FusionMode::W2,
            epochs: 200,
            blur_k: 0,
            blur_sweep: vec![0, 41, 91, 191],
            fusion_modes: vec!["NONE".into(), "W2".into(), "W3".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimSection {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            weight_decay: 0.01,
            warmup_epochs: 5,
            batch_size: 8,
        }
    }
}

/// Augmentation settings as they appear in the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub p_aug: f64,
    pub mask_lo: f64,
    pub mask_hi: f64,
    pub noise_scale: f64,
    pub mask_spans: usize,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let d = AugmentConfig::default();
        Self {
            p_aug: d.p_aug,
            mask_lo: d.mask_lo,
            mask_hi: d.mask_hi,
            noise_scale: d.noise_scale,
            mask_spans: d.mask_spans,
        }
    }
}

impl AugmentSection {
    pub fn model(&self) -> AugmentConfig {
        AugmentConfig {
            p_aug: self.p_aug,
            mask_lo: self.mask_lo,
            mask_hi: self.mask_hi,
            noise_scale: self.noise_scale,
            mask_spans: self.mask_spans,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanSection {
    pub ngf: usize,
    pub ndf: usize,
    pub res_blocks: usize,
    pub dropout: f64,
    pub instance_norm: bool,
    pub lambda: f64,
    /// `sigmoid_log` or `wasserstein`.
    pub loss: String,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub l1_weight: f64,
    /// Training steps of `train-gan`.
    pub steps: usize,
    /// Paired images in the colour-mapping training set.
    pub pairs: usize,
    pub image_size: usize,
}

impl Default for GanSection {
    fn default() -> Self {
        let g = GanConfig::toy();
        Self {
            ngf: g.ngf,
            ndf: g.ndf,
            res_blocks: g.res_blocks,
            dropout: g.dropout,
            instance_norm: g.instance_norm,
            lambda: g.lambda,
            loss: "sigmoid_log".into(),
            lr_g: g.lr_g,
            lr_d: g.lr_d,
            beta1: g.beta1,
            beta2: g.beta2,
            l1_weight: g.l1_weight,
            steps: 200,
            pairs: 8,
            image_size: 64,
        }
    }
}

impl GanSection {
    pub fn model(&self) -> Result<GanConfig> {
        let loss = match self.loss.to_ascii_lowercase().as_str() {
            "sigmoid_log" => GanLoss::SigmoidLog,
            "wasserstein" => GanLoss::Wasserstein,
            other => return Err(Error::config(format!("unknown GAN loss `{other}` (sigmoid_log, wasserstein)"))),
        };
        let cfg = GanConfig {
            ngf: self.ngf,
            ndf: self.ndf,
            res_blocks: self.res_blocks,
            dropout: self.dropout,
            instance_norm: self.instance_norm,
            lambda: self.lambda,
            loss,
            lr_g: self.lr_g,
            lr_d: self.lr_d,
            beta1: self.beta1,
            beta2: self.beta2,
            l1_weight: self.l1_weight,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSection::default(),
            toy: ToyDataSpec::default(),
            backbone: BackboneSection::default(),
            temporal: TemporalSection::default(),
            experiment: ExperimentSection::default(),
            optim: OptimSection::default(),
            augment: AugmentSection::default(),
            gan: GanSection::default(),
        }
    }
}

impl Config {
    /// Architecture and optimizer of the full-size model; data paths keep their defaults.
    pub fn full() -> Self {
        let b = BackboneConfig::full();
        let t = TemporalConfig::full(2);
        let g = GanConfig::default();
        Self {
            backbone: BackboneSection {
                patch_size: b.patch_size,
                image_size: b.image_size,
                stage_depths: b.stage_depths,
                stage_dims: b.stage_dims,
                downsample: b.downsample,
                mlp_ratio: b.mlp_ratio,
                trainable: true,
            },
            temporal: TemporalSection {
                latents: t.latents,
                blocks: t.blocks,
                self_heads: t.self_heads,
                cross_heads: t.cross_heads,
                cross_head_dim: t.cross_head_dim,
                out_dim: t.out_dim,
                sequential: t.sequential,
            },
            optim: OptimSection {
                lr: 2e-5,
                weight_decay: 0.1,
                warmup_epochs: 5,
                batch_size: 32,
            },
            augment: AugmentSection {
                p_aug: 0.7,
                ..Default::default()
            },
            gan: GanSection {
                ngf: g.ngf,
                ndf: g.ndf,
                instance_norm: g.instance_norm,
                lambda: g.lambda,
                lr_g: g.lr_g,
                lr_d: g.lr_d,
                image_size: 256,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves the manifest path against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if cfg.data.manifest.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data.manifest = dir.join(&cfg.data.manifest);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn temporal_model(&self) -> TemporalConfig {
        let t = &self.temporal;
        TemporalConfig {
            frames: self.data.frames,
            channels: self.backbone.stage_dims[3],
            latents: t.latents,
            blocks: t.blocks,
            self_heads: t.self_heads,
            cross_heads: t.cross_heads,
            cross_head_dim: t.cross_head_dim,
            out_dim: t.out_dim,
            num_classes: self.experiment.task.num_classes(),
            sequential: t.sequential,
        }
    }

    pub fn schedule(&self, steps_per_epoch: usize) -> ScheduleConfig {
        ScheduleConfig {
            base_lr: self.optim.lr,
            weight_decay: self.optim.weight_decay,
            warmup_epochs: self.optim.warmup_epochs,
            total_epochs: self.experiment.epochs,
            steps_per_epoch: steps_per_epoch.max(1),
            batch_size: self.optim.batch_size,
        }
    }

    pub fn fusion_modes(&self) -> Result<Vec<FusionMode>> {
        self.experiment.fusion_modes.iter().map(|m| m.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.model().validate()?;
        self.temporal_model().validate()?;
        self.augment.model().validate()?;
        self.schedule(1).validate()?;
        self.toy.validate()?;
        self.gan.model()?;
        self.fusion_modes()?;
        if self.data.frames == 0 {
            return Err(Error::config("data.frames must be positive"));
        }
        if self.experiment.epochs == 0 {
            return Err(Error::config("experiment.epochs must be positive"));
        }
        for &k in std::iter::once(&self.experiment.blur_k).chain(&self.experiment.blur_sweep) {
            if k % 2 == 0 && k != 0 {
                return Err(Error::config(format!("blur kernel size {k} must be 0 or odd")));
            }
        }
        Ok(())
    }
}

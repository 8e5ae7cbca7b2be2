//! Parameter and FLOP accounting for the whole pipeline, in closed form and as
//! measured on a built model.

use psl_core::{ParamStore32, Result, Tape32, Tensor32};
use psl_models::{backbone, temporal, FusionMode, FusionWeights, Modality};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::experiment::{streams, Pipeline};

/// Reference sizes quoted for the full-size model.
pub mod reference {
    pub const BACKBONE_PARAMS: f64 = 7.35e6;
    pub const TEMPORAL_PARAMS: f64 = 7.96e6;
    pub const BACKBONE_FLOPS: f64 = 30.95e9;
    pub const TEMPORAL_FLOPS: f64 = 30.90e9;
    pub const TOTAL_PARAMS: f64 = 15.31e6;
    pub const TOTAL_FLOPS: f64 = 61.85e9;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineCounts {
    pub backbone_params: usize,
    pub temporal_params: usize,
    pub fusion_params: usize,
    /// One frame through the encoder.
    pub backbone_flops_per_frame: u64,
    /// Every frame of every stream of one video.
    pub backbone_flops_per_video: u64,
    pub temporal_flops: u64,
}

impl PipelineCounts {
    pub fn total_params(&self) -> usize {
        self.backbone_params + self.temporal_params + self.fusion_params
    }

    pub fn total_flops(&self) -> u64 {
        self.backbone_flops_per_video + self.temporal_flops
    }
}

fn fusion_params(modality: Modality, fusion: FusionMode) -> usize {
    match modality {
        Modality::Fused => FusionWeights::num_params(fusion),
        _ => 0,
    }
}

fn stream_count(modality: Modality) -> u64 {
    let (rgb, thermal) = streams(modality);
    rgb as u64 + thermal as u64
}

/// Closed-form counts; FLOPs are 2 per multiply-add over matrix products.
pub fn analytic_counts(cfg: &Config, modality: Modality, fusion: FusionMode) -> Result<PipelineCounts> {
    let b = cfg.backbone.model();
    b.validate()?;
    let t = cfg.temporal_model();
    let per_frame = backbone::count_flops(&b);
    Ok(PipelineCounts {
        backbone_params: backbone::count_params(&b),
        temporal_params: temporal::count_params(&t)?,
        fusion_params: fusion_params(modality, fusion),
        backbone_flops_per_frame: per_frame,
        backbone_flops_per_video: per_frame * cfg.data.frames as u64 * stream_count(modality),
        temporal_flops: temporal::count_flops(&t)?,
    })
}

/// Counts read off a built pipeline: parameter tensors in the store, and the FLOP
/// counter of a tape after one forward pass on a zero video.
pub fn measured_counts(cfg: &Config, modality: Modality, fusion: FusionMode) -> Result<PipelineCounts> {
    let mut store = ParamStore32::new();
    let pipe = Pipeline::new(cfg, modality, fusion, &mut store, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let size = cfg.backbone.image_size;
    let tape = Tape32::new();
    let p = store.bind_constants(&tape);
    pipe.backbone.forward(&p, tape.constant(Tensor32::zeros(&[3, size, size])))?;
    let per_frame = tape.flops();
    tape.reset_flops();
    let video = Tensor32::zeros(&[cfg.data.frames * cfg.backbone.stage_dims[3]]);
    pipe.temporal.logits(&p, tape.constant(video))?;
    Ok(PipelineCounts {
        backbone_params: store.numel_with_prefix("backbone."),
        temporal_params: store.numel_with_prefix("temporal."),
        fusion_params: store.numel_with_prefix("fusion."),
        backbone_flops_per_frame: per_frame,
        backbone_flops_per_video: per_frame * cfg.data.frames as u64 * stream_count(modality),
        temporal_flops: tape.flops(),
    })
}

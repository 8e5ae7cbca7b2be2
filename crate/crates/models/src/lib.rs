//! Models of the pain-assessment pipeline: the Wave-MLP frame encoder, the temporal
//! transformer with latent cross-attention, modality fusion with embedding
//! augmentations, and the RGB→thermal conditional GAN.

pub mod augment;
pub mod backbone;
pub mod fusion;
pub mod gan;
pub mod nn;
pub mod temporal;

pub use augment::{AugmentConfig, AugmentPlan};
pub use backbone::{Backbone, BackboneConfig};
pub use fusion::{FusionMode, FusionWeights, Modality, PainLabel, VideoEmbedding};
pub use gan::{Discriminator, GanBundle, GanConfig, GanLoss, Generator};
pub use temporal::{TemporalConfig, TemporalTransformer};

pub type GanBundle32 = GanBundle<f32>;
pub type GanBundle64 = GanBundle<f64>;
pub type VideoEmbedding32 = VideoEmbedding<f32>;

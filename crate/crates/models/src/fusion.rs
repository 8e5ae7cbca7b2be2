//! Video-level embeddings and learned weighted fusion of the RGB and thermal streams.

use std::fmt;
use std::str::FromStr;

use psl_core::{Bound, Error, ParamId, ParamStore, Result, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Rgb,
    Thermal,
    Fused,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Rgb => "RGB",
            Modality::Thermal => "THERMAL",
            Modality::Fused => "FUSED",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGB" => Ok(Modality::Rgb),
            "THERMAL" => Ok(Modality::Thermal),
            "FUSED" => Ok(Modality::Fused),
            _ => Err(Error::config(format!("unknown modality `{s}`"))),
        }
    }
}

/// Pain intensity, from no pain to very severe pain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PainLabel {
    Np,
    P1,
    P2,
    P3,
    P4,
}

impl PainLabel {
    pub const ALL: [PainLabel; 5] = [PainLabel::Np, PainLabel::P1, PainLabel::P2, PainLabel::P3, PainLabel::P4];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PainLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PainLabel::Np => "NP",
            PainLabel::P1 => "P1",
            PainLabel::P2 => "P2",
            PainLabel::P3 => "P3",
            PainLabel::P4 => "P4",
        })
    }
}

impl FromStr for PainLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PainLabel::ALL
            .into_iter()
            .find(|l| l.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::config(format!("unknown pain label `{s}` (expected NP, P1..P4)")))
    }
}

/// Concatenated per-frame embeddings of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoEmbedding<T> {
    pub values: Tensor<T>,
    pub modality: Modality,
    pub subject_id: String,
    pub label: PainLabel,
}

/// Joins `m` frame embeddings of length `d` into one `m·d` vector, in order.
pub fn concat_frames<T: Scalar>(
    frames: &[Tensor<T>],
    modality: Modality,
    subject_id: &str,
    label: PainLabel,
) -> Result<VideoEmbedding<T>> {
    let d = frames.first().ok_or_else(|| Error::dim("video without frames"))?.numel();
    let mut values = Vec::with_capacity(frames.len() * d);
    for (i, f) in frames.iter().enumerate() {
        if f.numel() != d {
            return Err(Error::dim(format!("frame {i} has {} values, frame 0 has {d}", f.numel())));
        }
        values.extend_from_slice(f.data());
    }
    Ok(VideoEmbedding {
        values: Tensor::new([values.len()], values)?,
        modality,
        subject_id: subject_id.to_string(),
        label,
    })
}

/// In-graph version of [`concat_frames`].
pub fn concat_frame_vars<'t, T: Scalar>(frames: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let d = frames.first().ok_or_else(|| Error::dim("video without frames"))?.numel();
    if let Some(f) = frames.iter().find(|f| f.shape() != [d]) {
        return Err(Error::dim(format!("ragged frame embeddings: {:?} vs [{d}]", f.shape())));
    }
    Var::concat(frames, 0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FusionMode {
    /// Plain sum.
    #[default]
    None,
    /// `w1·rgb + w2·thermal`.
    W2,
    /// `w3·(w1·rgb + w2·thermal)`.
    W3,
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NONE" => Ok(FusionMode::None),
            "W2" => Ok(FusionMode::W2),
            "W3" => Ok(FusionMode::W3),
            _ => Err(Error::config(format!("unknown fusion mode `{s}` (NONE, W2, W3)"))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::None => "NONE",
            FusionMode::W2 => "W2",
            FusionMode::W3 => "W3",
        })
    }
}

/// Learnable fusion scalars, each stored as a one-element tensor initialized to 1.
#[derive(Clone, Debug)]
pub struct FusionWeights {
    pub mode: FusionMode,
    pub w1: Option<ParamId>,
    pub w2: Option<ParamId>,
    pub w3: Option<ParamId>,
}

impl FusionWeights {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, mode: FusionMode) -> Result<Self> {
        let mut scalar = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::ones(&[1]));
        let (w1, w2, w3) = match mode {
            FusionMode::None => (None, None, None),
            FusionMode::W2 => (Some(scalar("w1")?), Some(scalar("w2")?), None),
            FusionMode::W3 => (Some(scalar("w1")?), Some(scalar("w2")?), Some(scalar("w3")?)),
        };
        Ok(Self { mode, w1, w2, w3 })
    }

    pub fn num_params(mode: FusionMode) -> usize {
        match mode {
            FusionMode::None => 0,
            FusionMode::W2 => 2,
            FusionMode::W3 => 3,
        }
    }

    /// Fuses two equally long embedding vectors.
    pub fn fuse<'t, T: Scalar>(&self, p: &Bound<'t, T>, rgb: Var<'t, T>, thermal: Var<'t, T>) -> Result<Var<'t, T>> {
        if rgb.shape() != thermal.shape() {
            return Err(Error::contract(format!(
                "cannot fuse embeddings of shapes {:?} and {:?}",
                rgb.shape(),
                thermal.shape()
            )));
        }
        let weighted = |id: Option<ParamId>, v: Var<'t, T>| match id {
            Some(id) => v.mul(p.get(id)),
            None => Ok(v),
        };
        let sum = weighted(self.w1, rgb)?.add(weighted(self.w2, thermal)?)?;
        weighted(self.w3, sum)
    }
}

/// Fuses tagged RGB and thermal embeddings with the current weight values.
pub fn fuse<T: Scalar>(
    store: &ParamStore<T>,
    weights: &FusionWeights,
    rgb: &VideoEmbedding<T>,
    thermal: &VideoEmbedding<T>,
) -> Result<VideoEmbedding<T>> {
    if rgb.modality != Modality::Rgb || thermal.modality != Modality::Thermal {
        return Err(Error::contract(format!(
            "fusion expects RGB and THERMAL inputs, got {} and {}",
            rgb.modality, thermal.modality
        )));
    }
    if rgb.subject_id != thermal.subject_id || rgb.label != thermal.label {
        return Err(Error::contract("fused embeddings come from different videos"));
    }
    let tape = psl_core::Tape::new();
    let p = store.bind_constants(&tape);
    let out = weights.fuse(&p, tape.constant(rgb.values.clone()), tape.constant(thermal.values.clone()))?;
    Ok(VideoEmbedding {
        values: out.tensor(),
        modality: Modality::Fused,
        subject_id: rgb.subject_id.clone(),
        label: rgb.label,
    })
}

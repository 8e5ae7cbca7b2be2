//! Temporal transformer over a video's per-frame embeddings.
//!
//! The `M·C` video vector is viewed as `M` frame tokens. Each block runs single-head
//! self-attention over the frames, then lets `N < M` learned latent queries
//! cross-attend to the result with eight heads, so the cross step costs `O(N·M)`.
//! Block outputs are averaged (or chained in sequential mode), mean-pooled over the
//! latents and projected to the output embedding.

use psl_core::{Bound, Error, ParamId, ParamStore, Result, Scalar, Tensor, Var};
use rand::Rng;

use crate::nn::{LayerNorm, Linear};

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalConfig {
    /// Frame tokens per video (`M`).
    pub frames: usize,
    /// Per-frame embedding width (`C`).
    pub channels: usize,
    /// Learned latent queries (`N`).
    pub latents: usize,
    pub blocks: usize,
    pub self_heads: usize,
    pub cross_heads: usize,
    /// Per-head width of cross-attention; `None` splits `C` evenly across heads.
    pub cross_head_dim: Option<usize>,
    pub out_dim: usize,
    pub num_classes: usize,
    /// Chain the blocks instead of averaging them.
    pub sequential: bool,
}

impl TemporalConfig {
    /// 16 frames of 100-dim embeddings, 8 latents, 340-dim output.
    ///
    /// 100 channels do not split over 8 heads, so cross-attention uses 64-wide heads.
    pub fn full(num_classes: usize) -> Self {
        Self {
            frames: 16,
            channels: 100,
            latents: 8,
            blocks: 4,
            self_heads: 1,
            cross_heads: 8,
            cross_head_dim: Some(64),
            out_dim: 340,
            num_classes,
            sequential: false,
        }
    }

    pub fn toy(num_classes: usize) -> Self {
        Self {
            frames: 4,
            channels: 8,
            latents: 2,
            blocks: 4,
            self_heads: 1,
            cross_heads: 8,
            cross_head_dim: None,
            out_dim: 16,
            num_classes,
            sequential: false,
        }
    }

    pub fn self_head_dim(&self) -> Result<usize> {
        head_dim(self.channels, self.self_heads, None)
    }

    pub fn cross_head_dim(&self) -> Result<usize> {
        head_dim(self.channels, self.cross_heads, self.cross_head_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.channels == 0 || self.blocks == 0 || self.out_dim == 0 || self.num_classes < 2 {
            return Err(Error::config(format!("invalid temporal config {self:?}")));
        }
        if self.latents == 0 || self.latents >= self.frames {
            return Err(Error::config(format!(
                "latent count {} must be positive and below the frame count {}",
                self.latents, self.frames
            )));
        }
        self.self_head_dim()?;
        self.cross_head_dim()?;
        Ok(())
    }
}

fn head_dim(channels: usize, heads: usize, explicit: Option<usize>) -> Result<usize> {
    match explicit {
        Some(0) => Err(Error::config("head width must be positive")),
        Some(d) if heads > 0 => Ok(d),
        _ if heads > 0 && channels % heads == 0 => Ok(channels / heads),
        _ => Err(Error::config(format!(
            "{channels} channels do not divide over {heads} heads"
        ))),
    }
}

/// Multi-head scaled dot-product attention on already-projected `q[r × h·dₖ]`,
/// `k[m × h·dₖ]`, `v[m × h·dₖ]`; heads are concatenated in the output.
pub fn scaled_dot_attention<'t, T: Scalar>(q: Var<'t, T>, k: Var<'t, T>, v: Var<'t, T>, heads: usize) -> Result<Var<'t, T>> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 2 || ks.len() != 2 || ks != vs || qs[1] != ks[1] {
        return Err(Error::dim(format!("attention q {qs:?}, k {ks:?}, v {vs:?}")));
    }
    if heads == 0 || qs[1] % heads != 0 {
        return Err(Error::config(format!("width {} does not divide over {heads} heads", qs[1])));
    }
    let dk = qs[1] / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let outs = (0..heads)
        .map(|h| {
            let qh = q.narrow(1, h * dk, dk)?;
            let kh = k.narrow(1, h * dk, dk)?;
            let vh = v.narrow(1, h * dk, dk)?;
            qh.matmul(kh.t()?)?.scale(scale)?.softmax()?.matmul(vh)
        })
        .collect::<Result<Vec<_>>>()?;
    if heads == 1 {
        Ok(outs[0])
    } else {
        Var::concat(&outs, 1)
    }
}

/// Attention weights of one head, `softmax(q·kᵀ/√dₖ)`.
pub fn attention_weights<'t, T: Scalar>(q: Var<'t, T>, k: Var<'t, T>) -> Result<Var<'t, T>> {
    let dk = q.shape()[1] as f64;
    q.matmul(k.t()?)?.scale(1.0 / dk.sqrt())?.softmax()
}

/// Projected multi-head attention layer.
#[derive(Clone, Debug)]
pub struct Attention {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl Attention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        heads: usize,
        head_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let inner = heads * head_dim;
        Ok(Self {
            heads,
            query: Linear::new(store, &format!("{name}.query"), channels, inner, true, rng)?,
            key: Linear::new(store, &format!("{name}.key"), channels, inner, true, rng)?,
            value: Linear::new(store, &format!("{name}.value"), channels, inner, true, rng)?,
            output: Linear::new(store, &format!("{name}.output"), inner, channels, true, rng)?,
        })
    }

    pub fn num_params(channels: usize, inner: usize) -> usize {
        3 * Linear::num_params(channels, inner, true) + Linear::num_params(inner, channels, true)
    }

    /// Keys and values for a context `[m × C]`.
    pub fn project_kv<'t, T: Scalar>(&self, p: &Bound<'t, T>, context: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        Ok((self.key.forward(p, context)?, self.value.forward(p, context)?))
    }

    /// Query projection, attention and output projection for `queries[r × C]`.
    pub fn attend<'t, T: Scalar>(&self, p: &Bound<'t, T>, queries: Var<'t, T>, k: Var<'t, T>, v: Var<'t, T>) -> Result<Var<'t, T>> {
        let q = self.query.forward(p, queries)?;
        self.output.forward(p, scaled_dot_attention(q, k, v, self.heads)?)
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, queries: Var<'t, T>, context: Var<'t, T>) -> Result<Var<'t, T>> {
        let (k, v) = self.project_kv(p, context)?;
        self.attend(p, queries, k, v)
    }
}

#[derive(Clone, Debug)]
pub struct TemporalBlock {
    pub norm_frames: LayerNorm,
    pub self_attn: Attention,
    pub latents: ParamId,
    pub norm_latents: LayerNorm,
    pub norm_context: LayerNorm,
    pub cross_attn: Attention,
}

impl TemporalBlock {
    /// Self-attention over frames, then latent cross-attention. Returns the updated
    /// frame tokens and latents.
    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        frames: Var<'t, T>,
        latents: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let normed = self.norm_frames.forward(p, frames)?;
        let h = frames.add(self.self_attn.forward(p, normed, normed)?)?;
        let q = self.norm_latents.forward(p, latents)?;
        let ctx = self.norm_context.forward(p, h)?;
        let z = latents.add(self.cross_attn.forward(p, q, ctx)?)?;
        Ok((h, z))
    }
}

#[derive(Clone, Debug)]
pub struct TemporalTransformer {
    pub cfg: TemporalConfig,
    pub blocks: Vec<TemporalBlock>,
    pub project: Linear,
    pub head: Linear,
}

impl TemporalTransformer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: &TemporalConfig, store: &mut ParamStore<T>, prefix: &str, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let (sd, cd) = (cfg.self_head_dim()?, cfg.cross_head_dim()?);
        let blocks = (0..cfg.blocks)
            .map(|b| {
                let name = format!("{prefix}.block{b}");
                Ok(TemporalBlock {
                    norm_frames: LayerNorm::new(store, &format!("{name}.norm_frames"), c)?,
                    self_attn: Attention::new(store, &format!("{name}.self_attn"), c, cfg.self_heads, sd, rng)?,
                    latents: store.add(format!("{name}.latents"), Tensor::randn(&[cfg.latents, c], 0.02, rng))?,
                    norm_latents: LayerNorm::new(store, &format!("{name}.norm_latents"), c)?,
                    norm_context: LayerNorm::new(store, &format!("{name}.norm_context"), c)?,
                    cross_attn: Attention::new(store, &format!("{name}.cross_attn"), c, cfg.cross_heads, cd, rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            blocks,
            project: Linear::new(store, &format!("{prefix}.project"), c, cfg.out_dim, true, rng)?,
            head: Linear::new(store, &format!("{prefix}.head"), cfg.out_dim, cfg.num_classes, true, rng)?,
        })
    }

    /// Video vector `[M·C]` to the output embedding `[out_dim]`.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, video: Var<'t, T>) -> Result<Var<'t, T>> {
        let (m, c) = (self.cfg.frames, self.cfg.channels);
        if video.shape() != [m * c] {
            return Err(Error::dim(format!(
                "temporal module expects a {}-long video vector ({m} frames × {c}), got {:?}",
                m * c,
                video.shape()
            )));
        }
        let frames = video.reshape(&[m, c])?;
        let pooled = if self.cfg.sequential {
            let (mut h, mut z) = (frames, p.get(self.blocks[0].latents));
            for block in &self.blocks {
                (h, z) = block.forward(p, h, z)?;
            }
            z
        } else {
            let mut acc: Option<Var<'t, T>> = None;
            for block in &self.blocks {
                let (_, z) = block.forward(p, frames, p.get(block.latents))?;
                acc = Some(match acc {
                    Some(a) => a.add(z)?,
                    None => z,
                });
            }
            acc.expect("at least one block").scale(1.0 / self.blocks.len() as f64)?
        };
        self.project.forward(p, pooled.mean_axis(0)?)
    }

    /// Unnormalized class scores for a video vector.
    pub fn logits<'t, T: Scalar>(&self, p: &Bound<'t, T>, video: Var<'t, T>) -> Result<Var<'t, T>> {
        let emb = self.forward(p, video)?;
        self.head.forward(p, emb)
    }
}

/// Class probabilities from the output embedding.
pub fn classify<'t, T: Scalar>(p: &Bound<'t, T>, head: &Linear, emb: Var<'t, T>) -> Result<Var<'t, T>> {
    head.forward(p, emb)?.softmax()
}

/// Closed-form parameter count of [`TemporalTransformer`].
pub fn count_params(cfg: &TemporalConfig) -> Result<usize> {
    let c = cfg.channels;
    let self_inner = cfg.self_heads * cfg.self_head_dim()?;
    let cross_inner = cfg.cross_heads * cfg.cross_head_dim()?;
    let block = 3 * LayerNorm::num_params(c)
        + cfg.latents * c
        + Attention::num_params(c, self_inner)
        + Attention::num_params(c, cross_inner);
    Ok(cfg.blocks * block + Linear::num_params(c, cfg.out_dim, true) + Linear::num_params(cfg.out_dim, cfg.num_classes, true))
}

/// FLOPs of the cross-attention step excluding the key/value projection, which does
/// not depend on the number of latents.
pub fn cross_attention_flops(cfg: &TemporalConfig) -> Result<u64> {
    let (m, n, c) = (cfg.frames as u64, cfg.latents as u64, cfg.channels as u64);
    let inner = (cfg.cross_heads * cfg.cross_head_dim()?) as u64;
    // query projection + scores + weighted sum + output projection
    Ok(2 * (n * c * inner + n * m * inner + n * m * inner + n * inner * c))
}

/// FLOPs of the key/value projection of cross-attention.
pub fn cross_kv_flops(cfg: &TemporalConfig) -> Result<u64> {
    let inner = (cfg.cross_heads * cfg.cross_head_dim()?) as u64;
    Ok(2 * 2 * cfg.frames as u64 * cfg.channels as u64 * inner)
}

/// Closed-form FLOPs of [`TemporalTransformer::logits`] (matrix products only).
pub fn count_flops(cfg: &TemporalConfig) -> Result<u64> {
    let (m, c) = (cfg.frames as u64, cfg.channels as u64);
    let si = (cfg.self_heads * cfg.self_head_dim()?) as u64;
    let self_attn = 2 * (3 * m * c * si + 2 * m * m * si + m * si * c);
    let block = self_attn + cross_attention_flops(cfg)? + cross_kv_flops(cfg)?;
    let head = 2 * (c * cfg.out_dim as u64 + cfg.out_dim as u64 * cfg.num_classes as u64);
    Ok(cfg.blocks as u64 * block + head)
}

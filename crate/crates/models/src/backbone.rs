//! Wave-MLP frame encoder.
//!
//! A frame is cut into non-overlapping patches, projected to tokens and passed
//! through four stages of mixer blocks. Each block is
//!
//! ```text
//! x = x + reproject(wave_a(ln(x)) + wave_b(ln(x)) + channel(ln(x)))
//! x = x + mlp(ln(x))
//! ```
//!
//! where a wave branch treats every token as an amplitude with a learned phase and
//! mixes tokens through a real and an imaginary weight matrix. Between stages,
//! neighbouring `f×f` tokens are merged and projected to the next width. The frame
//! embedding is the mean of the last stage's tokens.

use psl_core::{Bound, Error, ParamId, ParamStore, Result, Scalar, Var};
use rand::Rng;

use crate::nn::{init_uniform, LayerNorm, Linear};

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    /// Pixels per patch edge.
    pub patch_size: usize,
    /// Square input frames of this edge length.
    pub image_size: usize,
    pub stage_depths: [usize; 4],
    pub stage_dims: [usize; 4],
    /// Token-grid merge factor at each of the three stage transitions (1 = no merge).
    pub downsample: [usize; 3],
    pub mlp_ratio: usize,
}

impl BackboneConfig {
    /// 224×224 frames, 16×16 patches, depths 3/4/18/3 and widths 64/128/320/100.
    ///
    /// The 14×14 patch grid admits a single 2×2 merge, applied after the first stage.
    pub fn full() -> Self {
        Self {
            patch_size: 16,
            image_size: 224,
            stage_depths: [3, 4, 18, 3],
            stage_dims: [64, 128, 320, 100],
            downsample: [2, 1, 1],
            mlp_ratio: 4,
        }
    }

    /// 16×16 frames with one block of width 4 per stage.
    pub fn toy() -> Self {
        Self {
            patch_size: 2,
            image_size: 16,
            stage_depths: [1, 1, 1, 1],
            stage_dims: [4, 4, 4, 4],
            downsample: [2, 2, 2],
            mlp_ratio: 4,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.stage_dims[3]
    }

    /// Edge length of the token grid in each stage.
    pub fn grid_sides(&self) -> [usize; 4] {
        let mut sides = [self.image_size / self.patch_size.max(1); 4];
        for s in 1..4 {
            sides[s] = sides[s - 1] / self.downsample[s - 1].max(1);
        }
        sides
    }

    pub fn tokens(&self, stage: usize) -> usize {
        let side = self.grid_sides()[stage];
        side * side
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size == 0 || self.mlp_ratio == 0 {
            return Err(Error::config("patch size, image size and mlp ratio must be positive"));
        }
        if self.stage_depths.contains(&0) || self.stage_dims.contains(&0) || self.downsample.contains(&0) {
            return Err(Error::config(format!(
                "stage depths {:?}, dims {:?} and merge factors {:?} must be positive",
                self.stage_depths, self.stage_dims, self.downsample
            )));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::config(format!(
                "image size {} is not a multiple of patch size {}",
                self.image_size, self.patch_size
            )));
        }
        let mut side = self.image_size / self.patch_size;
        for (s, &f) in self.downsample.iter().enumerate() {
            if side % f != 0 {
                return Err(Error::config(format!(
                    "stage {s} token grid {side}×{side} cannot be merged {f}×{f}"
                )));
            }
            side /= f;
        }
        Ok(())
    }
}

/// Flattens `frame[3×H×W]` into `[n × 3p²]` patch rows in raster order; each row is
/// laid out channel-major, then patch row, then patch column.
pub fn patch_partition<'t, T: Scalar>(frame: Var<'t, T>, patch: usize) -> Result<Var<'t, T>> {
    let s = frame.shape();
    if s.len() != 3 || patch == 0 || s[1] % patch != 0 || s[2] % patch != 0 {
        return Err(Error::dim(format!(
            "frame {s:?} cannot be cut into {patch}×{patch} patches"
        )));
    }
    let (c, gh, gw) = (s[0], s[1] / patch, s[2] / patch);
    frame
        .reshape(&[c, gh, patch, gw, patch])?
        .permute(&[1, 3, 0, 2, 4])?
        .reshape(&[gh * gw, c * patch * patch])
}

/// Per-token linear map `f_j ↦ W f_j (+ b)` on tokens `[n × d_in]`.
pub fn channel_mix<'t, T: Scalar>(tokens: Var<'t, T>, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
    crate::nn::affine(tokens, weight, bias)
}

/// Wave token mixing on `tokens[n × d]`:
/// `out_j = Σ_k real[j,k]·(f_k ⊙ cos θ_k) + imag[j,k]·(f_k ⊙ sin θ_k)` with `θ_k = phase·f_k`.
pub fn wave_block<'t, T: Scalar>(
    tokens: Var<'t, T>,
    real: Var<'t, T>,
    imag: Var<'t, T>,
    phase: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let (ts, rs, is, ps) = (tokens.shape(), real.shape(), imag.shape(), phase.shape());
    let n = ts[0];
    let d = *ts.last().unwrap_or(&0);
    if ts.len() != 2 || rs != [n, n] || is != [n, n] || ps != [d, d] {
        return Err(Error::dim(format!(
            "wave block: tokens {ts:?}, real {rs:?}, imaginary {is:?}, phase {ps:?}"
        )));
    }
    let theta = tokens.matmul(phase.t()?)?;
    let cos_part = tokens.mul(theta.cos()?)?;
    let sin_part = tokens.mul(theta.sin()?)?;
    real.matmul(cos_part)?.add(imag.matmul(sin_part)?)
}

#[derive(Clone, Debug)]
pub struct WaveBlock {
    pub real: ParamId,
    pub imag: ParamId,
    pub phase: ParamId,
}

impl WaveBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, n: usize, d: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            real: store.add(format!("{name}.real"), init_uniform(&[n, n], n, rng))?,
            imag: store.add(format!("{name}.imag"), init_uniform(&[n, n], n, rng))?,
            phase: store.add(format!("{name}.phase"), init_uniform(&[d, d], d, rng))?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, tokens: Var<'t, T>) -> Result<Var<'t, T>> {
        wave_block(tokens, p.get(self.real), p.get(self.imag), p.get(self.phase))
    }
}

/// Two wave branches and a channel branch in parallel, summed and re-projected.
#[derive(Clone, Debug)]
pub struct TokenMixer {
    pub waves: [WaveBlock; 2],
    pub channel: Linear,
    pub reproject: Linear,
}

impl TokenMixer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, n: usize, d: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            waves: [
                WaveBlock::new(store, &format!("{name}.wave_a"), n, d, rng)?,
                WaveBlock::new(store, &format!("{name}.wave_b"), n, d, rng)?,
            ],
            channel: Linear::new(store, &format!("{name}.channel"), d, d, true, rng)?,
            reproject: Linear::new(store, &format!("{name}.reproject"), d, d, false, rng)?,
        })
    }

    pub fn num_params(n: usize, d: usize) -> usize {
        2 * (2 * n * n + d * d) + Linear::num_params(d, d, true) + Linear::num_params(d, d, false)
    }

    /// The re-projected branch sum, without the residual.
    pub fn branches<'t, T: Scalar>(&self, p: &Bound<'t, T>, tokens: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = self.waves[0].forward(p, tokens)?;
        let b = self.waves[1].forward(p, tokens)?;
        let c = self.channel.forward(p, tokens)?;
        self.reproject.forward(p, a.add(b)?.add(c)?)
    }

    /// `tokens + branches(tokens)`.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, tokens: Var<'t, T>) -> Result<Var<'t, T>> {
        tokens.add(self.branches(p, tokens)?)
    }
}

#[derive(Clone, Debug)]
pub struct MixerBlock {
    pub norm_tokens: LayerNorm,
    pub mixer: TokenMixer,
    pub norm_channels: LayerNorm,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

impl MixerBlock {
    fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, n: usize, d: usize, ratio: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            norm_tokens: LayerNorm::new(store, &format!("{name}.norm_tokens"), d)?,
            mixer: TokenMixer::new(store, &format!("{name}.mixer"), n, d, rng)?,
            norm_channels: LayerNorm::new(store, &format!("{name}.norm_channels"), d)?,
            mlp_in: Linear::new(store, &format!("{name}.mlp_in"), d, ratio * d, true, rng)?,
            mlp_out: Linear::new(store, &format!("{name}.mlp_out"), ratio * d, d, true, rng)?,
        })
    }

    fn num_params(n: usize, d: usize, ratio: usize) -> usize {
        2 * LayerNorm::num_params(d)
            + TokenMixer::num_params(n, d)
            + Linear::num_params(d, ratio * d, true)
            + Linear::num_params(ratio * d, d, true)
    }

    fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let x = x.add(self.mixer.branches(p, self.norm_tokens.forward(p, x)?)?)?;
        let h = self.mlp_in.forward(p, self.norm_channels.forward(p, x)?)?.gelu()?;
        x.add(self.mlp_out.forward(p, h)?)
    }
}

/// Merges `f×f` neighbourhoods of a `side×side` token grid into single rows of width `f²·d`.
pub fn merge_tokens<'t, T: Scalar>(tokens: Var<'t, T>, side: usize, factor: usize) -> Result<Var<'t, T>> {
    let d = tokens.shape()[1];
    if factor == 1 {
        return Ok(tokens);
    }
    let m = side / factor;
    tokens
        .reshape(&[m, factor, m, factor, d])?
        .permute(&[0, 2, 1, 3, 4])?
        .reshape(&[m * m, factor * factor * d])
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub patch_embed: Linear,
    pub stages: Vec<Vec<MixerBlock>>,
    pub transitions: Vec<Linear>,
    pub prefix: String,
}

impl Backbone {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: &BackboneConfig, store: &mut ParamStore<T>, prefix: &str, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let p = cfg.patch_size;
        let patch_embed = Linear::new(store, &format!("{prefix}.patch_embed"), 3 * p * p, cfg.stage_dims[0], true, rng)?;
        let mut stages = Vec::with_capacity(4);
        let mut transitions = Vec::with_capacity(3);
        for s in 0..4 {
            let (n, d) = (cfg.tokens(s), cfg.stage_dims[s]);
            let blocks = (0..cfg.stage_depths[s])
                .map(|b| MixerBlock::new(store, &format!("{prefix}.stage{s}.block{b}"), n, d, cfg.mlp_ratio, rng))
                .collect::<Result<Vec<_>>>()?;
            stages.push(blocks);
            if s < 3 {
                let f = cfg.downsample[s];
                transitions.push(Linear::new(store, &format!("{prefix}.merge{s}"), f * f * d, cfg.stage_dims[s + 1], true, rng)?);
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            patch_embed,
            stages,
            transitions,
            prefix: prefix.to_string(),
        })
    }

    /// Stage-1 tokens `[n × d₀]` of a frame.
    pub fn embed_patches<'t, T: Scalar>(&self, p: &Bound<'t, T>, frame: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = frame.shape();
        let edge = self.cfg.image_size;
        if s != [3, edge, edge] {
            return Err(Error::dim(format!("backbone expects 3×{edge}×{edge} frames, got {s:?}")));
        }
        self.patch_embed.forward(p, patch_partition(frame, self.cfg.patch_size)?)
    }

    /// Frame `[3×H×W]` to its embedding `[d_final]`.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, frame: Var<'t, T>) -> Result<Var<'t, T>> {
        let sides = self.cfg.grid_sides();
        let mut x = self.embed_patches(p, frame)?;
        for (s, blocks) in self.stages.iter().enumerate() {
            let at_stage = |e: Error| match e {
                Error::Dimension(m) => Error::Dimension(format!("stage {s}: {m}")),
                other => other,
            };
            for block in blocks {
                x = block.forward(p, x).map_err(at_stage)?;
            }
            if s < 3 {
                let merged = merge_tokens(x, sides[s], self.cfg.downsample[s]).map_err(at_stage)?;
                x = self.transitions[s].forward(p, merged).map_err(at_stage)?;
            }
        }
        x.mean_axis(0)
    }
}

/// Closed-form parameter count of [`Backbone`] for `cfg`.
pub fn count_params(cfg: &BackboneConfig) -> usize {
    let p = cfg.patch_size;
    let mut total = Linear::num_params(3 * p * p, cfg.stage_dims[0], true);
    for s in 0..4 {
        let (n, d) = (cfg.tokens(s), cfg.stage_dims[s]);
        total += cfg.stage_depths[s] * MixerBlock::num_params(n, d, cfg.mlp_ratio);
        if s < 3 {
            let f = cfg.downsample[s];
            total += Linear::num_params(f * f * d, cfg.stage_dims[s + 1], true);
        }
    }
    total
}

/// Closed-form FLOPs (2 per multiply-add) of one [`Backbone::forward`], counting matrix
/// products only.
pub fn count_flops(cfg: &BackboneConfig) -> u64 {
    let p = cfg.patch_size as u64;
    let r = cfg.mlp_ratio as u64;
    let mut macs = cfg.tokens(0) as u64 * 3 * p * p * cfg.stage_dims[0] as u64;
    for s in 0..4 {
        let (n, d) = (cfg.tokens(s) as u64, cfg.stage_dims[s] as u64);
        // Two wave branches: phase estimate n·d², real and imaginary mixing 2·n²·d each.
        let waves = 2 * (n * d * d + 2 * n * n * d);
        let channel_and_reproject = 2 * n * d * d;
        let mlp = 2 * n * d * r * d;
        macs += cfg.stage_depths[s] as u64 * (waves + channel_and_reproject + mlp);
        if s < 3 {
            macs += n * d * cfg.stage_dims[s + 1] as u64;
        }
    }
    2 * macs
}

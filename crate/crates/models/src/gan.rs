//! Conditional GAN for paired RGB→thermal translation.
//!
//! The generator is a two-conv encoder (stride 2 each), a stack of residual blocks
//! with instance norm and dropout, and a two-layer transposed-conv decoder ending in
//! `tanh`. Dropout inside the residual blocks is the generator's noise source and is
//! off in evaluation. The discriminator sees source and candidate stacked along the
//! channel axis and scores every pixel with two 1×1 convolutions, so score `(i, j)`
//! depends on pixel `(i, j)` alone.

use psl_core::optim::{AdamW, AdamWConfig};
use psl_core::autograd::checks_enabled;
use psl_core::{Bound, Error, ParamId, ParamStore, Result, Scalar, Tape, Tensor, Var};
use rand::{Rng, RngCore};

use crate::nn::{dropout, init_uniform, NORM_EPS};

/// Guard added inside every `log` of the adversarial losses.
pub const LOG_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GanLoss {
    /// Sigmoid scores with log-likelihood losses; the generator minimizes `−log D`.
    #[default]
    SigmoidLog,
    /// Raw critic scores: `D(fake) − D(real)` for the critic, `−D(fake)` for the generator.
    Wasserstein,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    /// Generator base width; the residual trunk runs at twice this.
    pub ngf: usize,
    /// Hidden width of the discriminator.
    pub ndf: usize,
    pub res_blocks: usize,
    pub dropout: f64,
    /// Instance normalization after generator convolutions.
    pub instance_norm: bool,
    /// Gradient-penalty coefficient.
    pub lambda: f64,
    pub loss: GanLoss,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Weight of an optional L1 reconstruction term in the generator loss.
    pub l1_weight: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            ngf: 64,
            ndf: 64,
            res_blocks: 9,
            dropout: 0.5,
            instance_norm: true,
            lambda: 10.0,
            loss: GanLoss::SigmoidLog,
            lr_g: 2e-4,
            lr_d: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            l1_weight: 0.0,
        }
    }
}

impl GanConfig {
    /// Small networks for 64×64 tests. Instance norm is off because it erases the
    /// colour of flat inputs, and the faster rates with a light penalty let the
    /// adversarial signal settle within a few hundred steps.
    pub fn toy() -> Self {
        Self {
            ngf: 4,
            ndf: 8,
            instance_norm: false,
            lambda: 0.1,
            lr_g: 2e-3,
            lr_d: 1e-2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::config(format!("penalty coefficient {} must be non-negative", self.lambda)));
        }
        if self.ngf == 0 || self.ndf == 0 {
            return Err(Error::config("generator and discriminator widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        if !(self.l1_weight >= 0.0) {
            return Err(Error::config("L1 weight must be non-negative"));
        }
        Ok(())
    }
}

fn conv_weight<T: Scalar, R: Rng + ?Sized>(out_ch: usize, in_ch: usize, k: usize, rng: &mut R) -> Tensor<T> {
    init_uniform(&[out_ch, in_ch, k, k], in_ch * k * k, rng)
}

/// Normalizes each `(sample, channel)` plane of `x[B×C×H×W]` to mean 0, variance 1.
pub fn instance_norm<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::dim(format!("instance norm expects B×C×H×W, got {s:?}")));
    }
    x.reshape(&[s[0] * s[1], s[2] * s[3]])?.normalize_last(NORM_EPS)?.reshape(&s)
}

#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv_a: ParamId,
    pub conv_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub encoder: [ParamId; 2],
    pub blocks: Vec<ResidualBlock>,
    /// Transposed-conv weights stored in forward-conv layout `[in × out × 3 × 3]`.
    pub decoder: [ParamId; 2],
    pub out_bias: ParamId,
    pub dropout: f64,
    pub instance_norm: bool,
}

impl Generator {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: &GanConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        let (c1, c2) = (cfg.ngf, 2 * cfg.ngf);
        let encoder = [
            store.add("gen.enc0", conv_weight(c1, 3, 3, rng))?,
            store.add("gen.enc1", conv_weight(c2, c1, 3, rng))?,
        ];
        let blocks = (0..cfg.res_blocks)
            .map(|b| {
                Ok(ResidualBlock {
                    conv_a: store.add(format!("gen.res{b}.conv_a"), conv_weight(c2, c2, 3, rng))?,
                    conv_b: store.add(format!("gen.res{b}.conv_b"), conv_weight(c2, c2, 3, rng))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let decoder = [
            store.add("gen.dec0", init_uniform(&[c2, c1, 3, 3], c2 * 9, rng))?,
            store.add("gen.dec1", init_uniform(&[c1, 3, 3, 3], c1 * 9, rng))?,
        ];
        let out_bias = store.add("gen.out_bias", Tensor::zeros(&[3]))?;
        Ok(Self {
            encoder,
            blocks,
            decoder,
            out_bias,
            dropout: cfg.dropout,
            instance_norm: cfg.instance_norm,
        })
    }

    fn norm<'t, T: Scalar>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        if self.instance_norm {
            instance_norm(x)
        } else {
            Ok(x)
        }
    }

    /// Residual block: `x + in(conv(drop(relu(in(conv(x))))))`. Shape-preserving.
    pub fn residual<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        block: &ResidualBlock,
        x: Var<'t, T>,
        noise: Option<&mut dyn RngCore>,
    ) -> Result<Var<'t, T>> {
        let mut h = self.norm(x.conv2d(p.get(block.conv_a), 1, 1)?)?.relu()?;
        if let Some(rng) = noise {
            h = dropout(h, self.dropout, rng)?;
        }
        x.add(self.norm(h.conv2d(p.get(block.conv_b), 1, 1)?)?)
    }

    /// Translates `x[B×3×H×W]` with values in `[−1, 1]`; `noise` enables dropout.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>, mut noise: Option<&mut dyn RngCore>) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 || s[2] % 4 != 0 || s[3] % 4 != 0 {
            return Err(Error::dim(format!("generator expects B×3×H×W with H, W divisible by 4, got {s:?}")));
        }
        if checks_enabled() {
            let limit = T::one() + T::lit(1e-6);
            if x.value().data().iter().any(|v| v.abs() > limit) {
                return Err(Error::contract("generator input outside [-1, 1]"));
            }
        }
        let mut h = x;
        for &w in &self.encoder {
            h = self.norm(h.conv2d(p.get(w), 2, 1)?)?.relu()?;
        }
        for block in &self.blocks {
            let block_noise: Option<&mut dyn RngCore> = match noise {
                Some(ref mut r) => Some(&mut **r),
                None => None,
            };
            h = self.residual(p, block, h, block_noise)?;
        }
        h = self.norm(h.conv_transpose2d_padded(p.get(self.decoder[0]), 2, 1, 1)?)?.relu()?;
        h.conv_transpose2d_padded(p.get(self.decoder[1]), 2, 1, 1)?
            .add_along(p.get(self.out_bias), 1)?
            .tanh()
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub conv_a: ParamId,
    pub bias_a: ParamId,
    pub conv_b: ParamId,
    pub bias_b: ParamId,
}

impl Discriminator {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: &GanConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        Ok(Self {
            conv_a: store.add("disc.conv_a", conv_weight(cfg.ndf, 6, 1, rng))?,
            bias_a: store.add("disc.bias_a", Tensor::zeros(&[cfg.ndf]))?,
            conv_b: store.add("disc.conv_b", conv_weight(1, cfg.ndf, 1, rng))?,
            bias_b: store.add("disc.bias_b", Tensor::zeros(&[1]))?,
        })
    }

    /// Raw per-pixel scores `[B×1×H×W]` for source `x` and candidate `y`.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
        if x.shape() != y.shape() {
            return Err(Error::dim(format!(
                "discriminator source {:?} and candidate {:?} differ",
                x.shape(),
                y.shape()
            )));
        }
        Var::concat(&[x, y], 1)?
            .conv2d(p.get(self.conv_a), 1, 0)?
            .add_along(p.get(self.bias_a), 1)?
            .leaky_relu(0.2)?
            .conv2d(p.get(self.conv_b), 1, 0)?
            .add_along(p.get(self.bias_b), 1)
    }
}

fn log_guarded<'t, T: Scalar>(prob: Var<'t, T>) -> Result<Var<'t, T>> {
    prob.add_const(LOG_EPS)?.log()
}

/// Adversarial losses `(generator, discriminator)` from raw score maps on real and
/// generated pairs; means over batch and pixels.
pub fn cgan_losses<'t, T: Scalar>(real_scores: Var<'t, T>, fake_scores: Var<'t, T>, mode: GanLoss) -> Result<(Var<'t, T>, Var<'t, T>)> {
    match mode {
        GanLoss::SigmoidLog => {
            let real = real_scores.sigmoid()?;
            let fake = fake_scores.sigmoid()?;
            let d = log_guarded(real)?
                .mean()?
                .add(log_guarded(fake.neg()?.add_const(1.0)?)?.mean()?)?
                .neg()?;
            let g = log_guarded(fake)?.mean()?.neg()?;
            Ok((g, d))
        }
        GanLoss::Wasserstein => {
            let d = fake_scores.mean()?.sub(real_scores.mean()?)?;
            Ok((fake_scores.mean()?.neg()?, d))
        }
    }
}

/// Gradient penalty `λ·mean((‖∇ D(x̂)‖ − 1)²)` on interpolates `x̂ = ε·real + (1−ε)·fake`
/// with one uniform `ε` per sample.
///
/// `critic` maps a candidate batch `[B×C×H×W]` to a score map `[B×1×H×W]`. The gradient
/// of the summed map is normed over channels at every pixel and the penalty averaged
/// over samples and pixels, so each pixel's score is treated as its own critic; for
/// a 1×1 discriminator this is exactly the per-pixel critic gradient.
pub fn gradient_penalty<'t, T, F, R>(tape: &'t Tape<T>, critic: F, real: &Tensor<T>, fake: &Tensor<T>, lambda: f64, rng: &mut R) -> Result<Var<'t, T>>
where
    T: Scalar,
    F: Fn(Var<'t, T>) -> Result<Var<'t, T>>,
    R: Rng + ?Sized,
{
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("penalty coefficient {lambda} must be non-negative")));
    }
    if real.shape() != fake.shape() || real.rank() != 4 {
        return Err(Error::dim(format!(
            "penalty needs equal B×C×H×W batches, got {:?} and {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    if lambda == 0.0 {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let s = real.shape().to_vec();
    let per_sample = real.numel() / s[0];
    let eps: Vec<f64> = (0..s[0]).map(|_| rng.gen::<f64>()).collect();
    let mixed = Tensor::from_fn(&s, |i| {
        let e = T::lit(eps[i / per_sample]);
        e * real.data()[i] + (T::one() - e) * fake.data()[i]
    });
    let x_hat = tape.param(mixed);
    let score = critic(x_hat)?.sum()?;
    let grad = tape.grad(score, &[x_hat], true)?[0];
    let norms = grad.square()?.sum_axis(1)?.add_const(1e-12)?.sqrt()?;
    norms.add_const(-1.0)?.square()?.mean()?.scale(lambda)
}

/// Losses recorded by one [`GanBundle::train_step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub loss_d: f64,
    pub loss_g: f64,
    pub adversarial_d: f64,
    pub penalty: f64,
}

/// Generator and discriminator with their parameters and optimizers.
#[derive(Clone, Debug)]
pub struct GanBundle<T: Scalar> {
    pub cfg: GanConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub gen_params: ParamStore<T>,
    pub disc_params: ParamStore<T>,
    gen_opt: AdamW<T>,
    disc_opt: AdamW<T>,
}

impl<T: Scalar> GanBundle<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &GanConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut gen_params = ParamStore::new();
        let mut disc_params = ParamStore::new();
        let generator = Generator::new(cfg, &mut gen_params, rng)?;
        let discriminator = Discriminator::new(cfg, &mut disc_params, rng)?;
        let opt = |lr_cfg: &GanConfig| AdamWConfig {
            beta1: lr_cfg.beta1,
            beta2: lr_cfg.beta2,
            ..Default::default()
        };
        Ok(Self {
            gen_opt: AdamW::new(&gen_params, opt(cfg)),
            disc_opt: AdamW::new(&disc_params, opt(cfg)),
            cfg: cfg.clone(),
            generator,
            discriminator,
            gen_params,
            disc_params,
        })
    }

    /// One discriminator update (adversarial loss plus gradient penalty) followed by
    /// one generator update against the updated discriminator. `source` and `target`
    /// are `[B×3×H×W]` in `[−1, 1]`.
    pub fn train_step<R: RngCore>(&mut self, source: &Tensor<T>, target: &Tensor<T>, rng: &mut R) -> Result<StepRecord> {
        let tape = Tape::new();
        let gp = self.gen_params.bind(&tape);
        let x = tape.constant(source.clone());
        let y = tape.constant(target.clone());
        let fake = self.generator.forward(&gp, x, Some(rng as &mut dyn RngCore))?;
        let fake_fixed = fake.detach();

        let dp = self.disc_params.bind(&tape);
        let disc = &self.discriminator;
        let (_, adv_d) = cgan_losses(disc.forward(&dp, x, y)?, disc.forward(&dp, x, fake_fixed)?, self.cfg.loss)?;
        let penalty = gradient_penalty(&tape, |cand| disc.forward(&dp, x, cand), target, &fake_fixed.tensor(), self.cfg.lambda, rng)?;
        let loss_d = if self.cfg.lambda == 0.0 { adv_d } else { adv_d.add(penalty)? };
        let record_d = (loss_d.item()?.as_f64(), adv_d.item()?.as_f64(), penalty.item()?.as_f64());
        ensure_finite("discriminator", record_d.0)?;
        let d_grads = dp.grads(&tape.backward(loss_d)?);
        self.disc_opt.step(&mut self.disc_params, &d_grads, self.cfg.lr_d)?;

        let dp = self.disc_params.bind_constants(&tape);
        let fake_scores = self.discriminator.forward(&dp, x, fake)?;
        let real_scores = fake_scores.detach();
        let (mut loss_g, _) = cgan_losses(real_scores, fake_scores, self.cfg.loss)?;
        if self.cfg.l1_weight > 0.0 {
            loss_g = loss_g.add(fake.sub(y)?.abs()?.mean()?.scale(self.cfg.l1_weight)?)?;
        }
        let g_value = loss_g.item()?.as_f64();
        ensure_finite("generator", g_value)?;
        let g_grads = gp.grads(&tape.backward(loss_g)?);
        self.gen_opt.step(&mut self.gen_params, &g_grads, self.cfg.lr_g)?;

        Ok(StepRecord {
            loss_d: record_d.0,
            loss_g: g_value,
            adversarial_d: record_d.1,
            penalty: record_d.2,
        })
    }

    /// Evaluation-mode translation of a batch `[B×3×H×W]`.
    pub fn translate_batch(&self, source: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = self.gen_params.bind_constants(&tape);
        Ok(self.generator.forward(&p, tape.constant(source.clone()), None)?.tensor())
    }

    /// Mean absolute error of evaluation-mode translations against `target`.
    pub fn mae(&self, source: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
        let out = self.translate_batch(source)?;
        let total: f64 = out.data().iter().zip(target.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).sum();
        Ok(total / out.numel() as f64)
    }
}

fn ensure_finite(which: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op: if which == "generator" { "generator loss" } else { "discriminator loss" } })
    }
}

/// Translates each RGB frame `[3×H×W]` to thermal in evaluation mode.
pub fn translate_video<T: Scalar>(generator: &Generator, params: &ParamStore<T>, frames: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    let tape = Tape::new();
    let p = params.bind_constants(&tape);
    frames
        .iter()
        .map(|f| {
            let s = f.shape();
            let batch = f.reshape(&[1, s[0], s[1], s[2]])?;
            let out = generator.forward(&p, tape.constant(batch), None)?;
            out.tensor().reshape(s)
        })
        .collect()
}

/// Paired solid-colour toy images: each source is one random RGB colour and its
/// target is a fixed pseudo-thermal recolouring of that colour's luminance.
/// Returns `(source, target)` batches `[n×3×size×size]`.
pub fn toy_color_pairs<T: Scalar, R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> (Tensor<T>, Tensor<T>) {
    let plane = size * size;
    let mut src = Vec::with_capacity(n * 3 * plane);
    let mut dst = Vec::with_capacity(n * 3 * plane);
    for _ in 0..n {
        let rgb: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.9..0.9));
        let thermal = pseudo_thermal(rgb);
        for c in 0..3 {
            src.extend(std::iter::repeat(T::lit(rgb[c])).take(plane));
            dst.extend(std::iter::repeat(T::lit(thermal[c])).take(plane));
        }
    }
    let shape = [n, 3, size, size];
    (Tensor::new(shape, src).expect("sized"), Tensor::new(shape, dst).expect("sized"))
}

/// Luminance mapped through a warm colour ramp, in `[−1, 1]`.
pub fn pseudo_thermal(rgb: [f64; 3]) -> [f64; 3] {
    let lum = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
    [
        (1.6 * lum + 0.3).clamp(-1.0, 1.0),
        lum.clamp(-1.0, 1.0),
        (-0.8 * lum - 0.2).clamp(-1.0, 1.0),
    ]
}

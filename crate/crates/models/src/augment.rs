//! Embedding-space augmentations: polarity inversion with additive noise, and zeroed
//! masks over contiguous spans. Applied during training only.

use psl_core::{Error, Result, Scalar, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Probability of applying each method, drawn independently per method.
    pub p_aug: f64,
    pub mask_lo: f64,
    pub mask_hi: f64,
    /// Noise standard deviation relative to the embedding's RMS.
    pub noise_scale: f64,
    /// Number of masked spans per application.
    pub mask_spans: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_aug: 0.0,
            mask_lo: 0.1,
            mask_hi: 0.5,
            noise_scale: 0.05,
            mask_spans: 1,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.p_aug) || !unit(self.mask_lo) || !unit(self.mask_hi) || self.mask_lo > self.mask_hi {
            return Err(Error::config(format!(
                "augmentation needs 0 ≤ p ≤ 1 and 0 ≤ mask_lo ≤ mask_hi ≤ 1, got p={} mask=[{}, {}]",
                self.p_aug, self.mask_lo, self.mask_hi
            )));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::config(format!("noise scale {} must be non-negative", self.noise_scale)));
        }
        Ok(())
    }
}

fn rms<T: Scalar>(values: &Tensor<T>) -> f64 {
    let ss: f64 = values.data().iter().map(|v| v.as_f64() * v.as_f64()).sum();
    (ss / values.numel() as f64).sqrt()
}

fn noise<T: Scalar, R: Rng + ?Sized>(values: &Tensor<T>, scale: f64, rng: &mut R) -> Tensor<T> {
    let std = scale * rms(values);
    Tensor::from_fn(values.shape(), |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(std * z)
    })
}

/// Inclusive range of admissible span lengths for an `n`-long vector.
fn span_bounds(n: usize, lo: f64, hi: f64) -> Result<(usize, usize)> {
    let min = (lo * n as f64 - 1e-9).ceil().max(0.0) as usize;
    let max = (hi * n as f64 + 1e-9).floor() as usize;
    if max >= n && n > 0 && hi > 0.0 {
        return Err(Error::contract(format!(
            "mask bound {hi} allows a span covering all {n} coordinates"
        )));
    }
    if min > max {
        return Err(Error::contract(format!("mask bounds [{lo}, {hi}] admit no span length for {n} coordinates")));
    }
    Ok((min, max))
}

fn draw_span<R: Rng + ?Sized>(n: usize, bounds: (usize, usize), rng: &mut R) -> (usize, usize) {
    let len = rng.gen_range(bounds.0..=bounds.1);
    let start = rng.gen_range(0..=n - len);
    (start, len)
}

/// Negates the embedding and adds Gaussian noise with std `noise_scale · RMS(values)`.
pub fn augment_basic<T: Scalar, R: Rng + ?Sized>(values: &Tensor<T>, noise_scale: f64, rng: &mut R) -> Tensor<T> {
    let neg = values.map(|v| -v);
    if noise_scale == 0.0 {
        return neg;
    }
    let n = noise(values, noise_scale, rng);
    neg.zip_map(&n, |a, b| a + b).expect("same shape")
}

/// Zeroes one contiguous span whose length is uniform over
/// `[⌈lo·N⌉, ⌊hi·N⌋]`, at a uniform start.
pub fn augment_mask<T: Scalar, R: Rng + ?Sized>(values: &Tensor<T>, lo: f64, hi: f64, rng: &mut R) -> Result<Tensor<T>> {
    let n = values.numel();
    let bounds = span_bounds(n, lo, hi)?;
    let (start, len) = draw_span(n, bounds, rng);
    let mut out = values.clone();
    out.data_mut()[start..start + len].fill(T::zero());
    Ok(out)
}

/// The random choices of one augmentation draw, replayable on a tensor or in-graph.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPlan<T> {
    pub negate: bool,
    pub noise: Option<Tensor<T>>,
    pub spans: Vec<(usize, usize)>,
}

impl<T: Scalar> AugmentPlan<T> {
    pub fn identity() -> Self {
        Self {
            negate: false,
            noise: None,
            spans: Vec::new(),
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.negate && self.noise.is_none() && self.spans.iter().all(|s| s.1 == 0)
    }

    /// Draws the plan for `values`: basic with probability `p_aug`, then masking with
    /// an independent probability `p_aug`.
    pub fn draw<R: Rng + ?Sized>(values: &Tensor<T>, cfg: &AugmentConfig, rng: &mut R) -> Result<Self> {
        let basic = rng.gen_bool(cfg.p_aug);
        let masking = rng.gen_bool(cfg.p_aug);
        let mut plan = Self::identity();
        if basic {
            plan.negate = true;
            if cfg.noise_scale > 0.0 {
                plan.noise = Some(noise(values, cfg.noise_scale, rng));
            }
        }
        if masking {
            let n = values.numel();
            let bounds = span_bounds(n, cfg.mask_lo, cfg.mask_hi)?;
            plan.spans = (0..cfg.mask_spans).map(|_| draw_span(n, bounds, rng)).collect();
        }
        Ok(plan)
    }

    fn mask(&self, n: usize) -> Option<Tensor<T>> {
        if self.spans.iter().all(|s| s.1 == 0) {
            return None;
        }
        let mut m = Tensor::ones(&[n]);
        for &(start, len) in &self.spans {
            m.data_mut()[start..start + len].fill(T::zero());
        }
        Some(m)
    }

    pub fn apply(&self, values: &Tensor<T>) -> Tensor<T> {
        let mut out = if self.negate { values.map(|v| -v) } else { values.clone() };
        if let Some(n) = &self.noise {
            out = out.zip_map(n, |a, b| a + b).expect("noise drawn for this shape");
        }
        if let Some(m) = self.mask(values.numel()) {
            out = out.zip_map(&m, |a, b| a * b).expect("mask drawn for this shape");
        }
        out
    }

    pub fn apply_var<'t>(&self, v: Var<'t, T>) -> Result<Var<'t, T>> {
        let tape = v.tape();
        let mut out = if self.negate { v.neg()? } else { v };
        if let Some(n) = &self.noise {
            out = out.add(tape.constant(n.clone()))?;
        }
        if let Some(m) = self.mask(v.numel()) {
            out = out.mul(tape.constant(m))?;
        }
        Ok(out)
    }
}

/// Training-time augmentation of an embedding; the identity when `training` is false.
pub fn apply_augmentations<T: Scalar, R: Rng + ?Sized>(
    values: &Tensor<T>,
    cfg: &AugmentConfig,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if !training {
        return Ok(values.clone());
    }
    Ok(AugmentPlan::draw(values, cfg, rng)?.apply(values))
}

//! A self-contained gradient check over every differentiable primitive and each
//! composite block, in 64-bit with central differences.

use psl_core::gradcheck::{gradcheck, DEFAULT_STEP};
use psl_core::{Bound, ParamStore64, Result, Tensor64, Var};
use psl_models::backbone::{wave_block, Backbone, BackboneConfig, TokenMixer};
use psl_models::gan::{cgan_losses, gradient_penalty, Discriminator, GanConfig, GanLoss, Generator};
use psl_models::temporal::{scaled_dot_attention, Attention};
use psl_models::{FusionMode, FusionWeights, TemporalConfig, TemporalTransformer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::loss::{cross_entropy, multitask_loss};

type Scalar64Fn = Box<dyn for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>>;

/// Worst relative error of one check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCase {
    pub name: String,
    pub max_rel_err: f64,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Values bounded away from zero so kinked ops stay differentiable.
fn away_from_zero(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor64 {
    Tensor64::from_fn(shape, |_| {
        let m = r.gen_range(0.2..1.5);
        if r.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduces `y` to a scalar with fixed random weights, so every output coordinate matters.
fn weighted<'t>(y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let w = Tensor64::randn(&y.shape(), 1.0, &mut rng(seed));
    y.mul(y.tape().constant(w))?.sum()
}

fn params(store: &ParamStore64) -> Vec<Tensor64> {
    store.iter().map(|(_, _, t)| t.clone()).collect()
}

type Unary = for<'t> fn(Var<'t, f64>) -> Result<Var<'t, f64>>;
type Binary = for<'t> fn(Var<'t, f64>, Var<'t, f64>) -> Result<Var<'t, f64>>;
type Case = (&'static str, Vec<Tensor64>, Scalar64Fn);

fn boxed<F>(f: F) -> Scalar64Fn
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>> + 'static,
{
    Box::new(f)
}

fn unary(name: &'static str, x: &Tensor64, op: Unary) -> Case {
    (name, vec![x.clone()], boxed(move |v| weighted(op(v[0])?, 11)))
}

fn binary(name: &'static str, a: &Tensor64, b: &Tensor64, op: Binary) -> Case {
    (name, vec![a.clone(), b.clone()], boxed(move |v| weighted(op(v[0], v[1])?, 12)))
}

fn primitive_cases() -> Vec<Case> {
    let mut r = rng(1);
    let v5 = away_from_zero(&[5], &mut r);
    let pos5 = v5.map(f64::abs);
    let w5 = away_from_zero(&[5], &mut r);
    let m34 = Tensor64::randn(&[3, 4], 1.0, &mut r);
    let m42 = Tensor64::randn(&[4, 2], 1.0, &mut r);
    let row4 = Tensor64::randn(&[4], 1.0, &mut r);

    let mut cases = vec![
        unary("neg", &v5, |x| x.neg()),
        unary("abs", &v5, |x| x.abs()),
        unary("cos", &v5, |x| x.cos()),
        unary("sin", &v5, |x| x.sin()),
        unary("exp", &v5, |x| x.exp()),
        unary("log", &pos5, |x| x.log()),
        unary("sqrt", &pos5, |x| x.sqrt()),
        unary("tanh", &v5, |x| x.tanh()),
        unary("sigmoid", &v5, |x| x.sigmoid()),
        unary("relu", &v5, |x| x.relu()),
        unary("leaky_relu", &v5, |x| x.leaky_relu(0.2)),
        unary("gelu", &v5, |x| x.gelu()),
        unary("square", &v5, |x| x.square()),
        unary("scale", &v5, |x| x.scale(-2.5)),
        unary("add_const", &v5, |x| x.add_const(3.0)),
        binary("add", &v5, &w5, |a, b| a.add(b)),
        binary("sub", &v5, &w5, |a, b| a.sub(b)),
        binary("mul", &v5, &w5, |a, b| a.mul(b)),
        binary("div", &v5, &w5, |a, b| a.div(b)),
        binary("scalar_broadcast", &v5, &w5, |a, b| a.mul(b.narrow(0, 2, 1)?)),
        binary("matmul", &m34, &m42, |a, b| a.matmul(b)),
        unary("transpose", &m34, |x| x.t()),
        unary("reshape", &m34, |x| x.reshape(&[2, 6])),
        unary("permute", &m34, |x| x.permute(&[1, 0])),
        unary("narrow", &m34, |x| x.narrow(1, 1, 2)),
        unary("embed", &m34, |x| x.embed(0, 1, 5)),
        unary("concat", &m34, |x| Var::concat(&[x, x.scale(2.0)?], 0)),
        unary("sum", &m34, |x| x.sum()),
        unary("mean", &m34, |x| x.mean()),
        unary("sum_axis", &m34, |x| x.sum_axis(1)),
        unary("mean_axis", &m34, |x| x.mean_axis(0)),
        unary("expand_axis", &m34, |x| x.sum_axis(0)?.expand_axis(0, 3)),
        unary("expand_all", &m34, |x| x.sum()?.expand_all(&[2, 2])),
        unary("reduce_to", &m34, |x| x.reduce_to(1)),
        unary("softmax", &m34, |x| x.softmax()),
        unary("log_softmax", &m34, |x| x.log_softmax()),
        unary("normalize_last", &m34, |x| x.normalize_last(1e-5)),
        unary("broadcast_along", &row4, |x| x.broadcast_along(1, &[3, 4])),
        binary("add_along", &m34, &row4, |a, b| a.add_along(b, 1)),
        binary("mul_along", &m34, &row4, |a, b| a.mul_along(b, 1)),
    ];
    cases.push((
        "layernorm",
        vec![m34.clone(), row4.clone(), row4.map(|x| x * 0.5)],
        boxed(|v| weighted(v[0].layernorm(v[1], v[2], 1e-5)?, 18)),
    ));
    cases.push(binary(
        "conv2d",
        &Tensor64::randn(&[2, 2, 5, 5], 1.0, &mut r),
        &Tensor64::randn(&[3, 2, 3, 3], 0.5, &mut r),
        |x, w| x.conv2d(w, 2, 1),
    ));
    cases.push(binary(
        "conv_transpose2d",
        &Tensor64::randn(&[2, 3, 3, 3], 1.0, &mut r),
        &Tensor64::randn(&[3, 2, 3, 3], 0.5, &mut r),
        |x, w| x.conv_transpose2d(w, 2, 1),
    ));
    cases.push((
        "double_backward_conv",
        vec![Tensor64::randn(&[1, 1, 5, 5], 1.0, &mut r), Tensor64::randn(&[2, 1, 3, 3], 0.5, &mut r)],
        boxed(|v| {
            let y = v[0].conv2d(v[1], 2, 1)?.tanh()?.sum()?;
            let gw = v[0].tape().grad(y, &[v[1]], true)?[0];
            gw.square()?.sum()
        }),
    ));
    cases
}

fn composite_cases() -> Result<Vec<Case>> {
    let mut r = rng(2);
    let mut cases: Vec<Case> = Vec::new();

    cases.push((
        "wave_block",
        vec![
            Tensor64::randn(&[3, 2], 1.0, &mut r),
            Tensor64::randn(&[3, 3], 1.0, &mut r),
            Tensor64::randn(&[3, 3], 1.0, &mut r),
            Tensor64::randn(&[2, 2], 1.0, &mut r),
        ],
        boxed(|v| weighted(wave_block(v[0], v[1], v[2], v[3])?, 21)),
    ));

    let mut store = ParamStore64::new();
    let mixer = TokenMixer::new(&mut store, "mix", 3, 2, &mut r)?;
    let mut inputs = params(&store);
    inputs.push(Tensor64::randn(&[3, 2], 1.0, &mut r));
    cases.push((
        "token_mixer",
        inputs,
        boxed(move |v| {
            let (tokens, ps) = v.split_last().expect("inputs");
            weighted(mixer.forward(&Bound::from_vars(ps.to_vec()), *tokens)?, 22)
        }),
    ));

    let cfg = BackboneConfig {
        patch_size: 2,
        image_size: 4,
        stage_depths: [1, 1, 1, 1],
        stage_dims: [4, 4, 4, 4],
        downsample: [1, 2, 1],
        mlp_ratio: 2,
    };
    let mut store = ParamStore64::new();
    let backbone = Backbone::new(&cfg, &mut store, "b", &mut r)?;
    let mut inputs = params(&store);
    inputs.push(Tensor64::uniform(&[3, 4, 4], -1.0, 1.0, &mut r));
    cases.push((
        "backbone",
        inputs,
        boxed(move |v| {
            let (frame, ps) = v.split_last().expect("inputs");
            weighted(backbone.forward(&Bound::from_vars(ps.to_vec()), *frame)?, 23)
        }),
    ));

    cases.push((
        "scaled_dot_attention",
        vec![
            Tensor64::randn(&[2, 4], 1.0, &mut r),
            Tensor64::randn(&[3, 4], 1.0, &mut r),
            Tensor64::randn(&[3, 4], 1.0, &mut r),
        ],
        boxed(|v| weighted(scaled_dot_attention(v[0], v[1], v[2], 2)?, 24)),
    ));

    let mut store = ParamStore64::new();
    let attn = Attention::new(&mut store, "attn", 4, 4, 2, &mut r)?;
    let mut inputs = params(&store);
    inputs.push(Tensor64::randn(&[2, 4], 1.0, &mut r));
    inputs.push(Tensor64::randn(&[3, 4], 1.0, &mut r));
    cases.push((
        "cross_attention",
        inputs,
        boxed(move |v| {
            let n = v.len();
            let p = Bound::from_vars(v[..n - 2].to_vec());
            weighted(attn.forward(&p, v[n - 2], v[n - 1])?, 25)
        }),
    ));

    let mut tcfg = TemporalConfig::toy(2);
    tcfg.blocks = 2;
    tcfg.channels = 4;
    tcfg.cross_heads = 2;
    tcfg.out_dim = 3;
    let mut store = ParamStore64::new();
    let transformer = TemporalTransformer::new(&tcfg, &mut store, "t", &mut r)?;
    let mut inputs = params(&store);
    inputs.push(Tensor64::randn(&[16], 1.0, &mut r));
    cases.push((
        "temporal_transformer",
        inputs,
        boxed(move |v| {
            let (video, ps) = v.split_last().expect("inputs");
            cross_entropy(transformer.logits(&Bound::from_vars(ps.to_vec()), *video)?, 1)
        }),
    ));

    for (name, mode, values) in [
        ("fuse_w2", FusionMode::W2, vec![0.8, 1.3]),
        ("fuse_w3", FusionMode::W3, vec![0.8, 1.3, -0.6]),
    ] {
        let mut store = ParamStore64::new();
        let w = FusionWeights::new(&mut store, "f", mode)?;
        let mut inputs: Vec<Tensor64> = values.iter().map(|&x| Tensor64::full(&[1], x)).collect();
        inputs.push(Tensor64::randn(&[6], 1.0, &mut r));
        inputs.push(Tensor64::randn(&[6], 1.0, &mut r));
        cases.push((
            name,
            inputs,
            boxed(move |v| {
                let n = v.len();
                let p = Bound::from_vars(v[..n - 2].to_vec());
                weighted(w.fuse(&p, v[n - 2], v[n - 1])?, 26)
            }),
        ));
    }

    cases.push((
        "multitask_loss",
        vec![
            Tensor64::full(&[1], 0.7),
            Tensor64::full(&[1], 1.9),
            Tensor64::full(&[1], -0.4),
            Tensor64::full(&[1], 0.3),
        ],
        boxed(|v| multitask_loss(v[0], v[1], v[2], v[3])?.sum()),
    ));
    cases.push((
        "cross_entropy",
        vec![Tensor64::randn(&[5], 1.0, &mut r)],
        boxed(|v| cross_entropy(v[0], 3)),
    ));

    let scores = vec![Tensor64::randn(&[2, 1, 2, 2], 1.5, &mut r), Tensor64::randn(&[2, 1, 2, 2], 1.5, &mut r)];
    cases.push((
        "cgan_losses_sigmoid_log",
        scores.clone(),
        boxed(|v| {
            let (g, d) = cgan_losses(v[0], v[1], GanLoss::SigmoidLog)?;
            g.add(d.scale(0.7)?)
        }),
    ));
    cases.push((
        "cgan_losses_wasserstein",
        scores,
        boxed(|v| {
            let (g, d) = cgan_losses(v[0], v[1], GanLoss::Wasserstein)?;
            g.add(d.scale(0.7)?)
        }),
    ));

    let gan = GanConfig {
        ngf: 2,
        ndf: 3,
        res_blocks: 1,
        ..GanConfig::toy()
    };
    let mut store = ParamStore64::new();
    let generator = Generator::new(&gan, &mut store, &mut r)?;
    let mut inputs = params(&store);
    inputs.push(Tensor64::uniform(&[1, 3, 4, 4], -1.0, 1.0, &mut r));
    cases.push((
        "generator",
        inputs,
        boxed(move |v| {
            let (x, ps) = v.split_last().expect("inputs");
            weighted(generator.forward(&Bound::from_vars(ps.to_vec()), *x, None)?, 27)
        }),
    ));

    let mut store = ParamStore64::new();
    let disc = Discriminator::new(&gan, &mut store, &mut r)?;
    let src = Tensor64::uniform(&[2, 3, 3, 3], -1.0, 1.0, &mut r);
    let real = Tensor64::uniform(&[2, 3, 3, 3], -1.0, 1.0, &mut r);
    let fake = Tensor64::uniform(&[2, 3, 3, 3], -1.0, 1.0, &mut r);
    cases.push((
        "gradient_penalty",
        params(&store),
        boxed(move |v| {
            let tape = v[0].tape();
            let p = Bound::from_vars(v.to_vec());
            let x = tape.constant(src.clone());
            gradient_penalty(tape, |cand| disc.forward(&p, x, cand), &real, &fake, 10.0, &mut rng(28))
        }),
    ));
    Ok(cases)
}

/// Runs every check and returns the worst error of each.
pub fn run_gradient_suite() -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    for (name, inputs, f) in primitive_cases().into_iter().chain(composite_cases()?) {
        out.push(GradCase {
            name: name.to_string(),
            max_rel_err: gradcheck(f, &inputs, DEFAULT_STEP)?,
        });
    }
    Ok(out)
}

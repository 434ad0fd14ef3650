//! Finite-difference checks of every differentiable building block, on
//! several shapes each.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::loss::{
    gan_discriminator_loss, gan_generator_loss, masked_l1, stage1_loss, FeatureExtractor, FeatureExtractorConfig,
    Stage1Targets, Stage1Weights,
};
use crate::nn::{Activation, Bound, GatedConv, GatedConvSpec};
use crate::tensor::gradcheck::{check, project, GradReport};
use crate::tensor::{ConvAlgo, Tensor, Var};

/// Relative (norm-wise) tolerance.
pub const RELATIVE_TOL: f64 = 1e-5;
/// Per-element absolute tolerance.
pub const ELEMENTWISE_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub op: &'static str,
    pub shape: String,
    pub relative: f64,
    /// Largest per-element absolute difference.
    pub elementwise: f64,
    pub checked: usize,
}

impl CaseResult {
    fn new(op: &'static str, shape: String, r: GradReport) -> Self {
        CaseResult {
            op,
            shape,
            relative: r.max_relative(),
            elementwise: r.max_absolute,
            checked: r.checked,
        }
    }

    pub fn passes(&self) -> bool {
        self.relative <= RELATIVE_TOL && self.elementwise <= ELEMENTWISE_TOL
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: impl Into<Vec<usize>>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.into(), |_| rng.gen_range(lo..hi))
}

/// Pixel coordinates inside a `w×h` image whose fractional parts keep away
/// from the bilinear kinks at integers.
fn coords(rng: &mut ChaCha8Rng, n: usize, oh: usize, ow: usize, w: usize, h: usize) -> Tensor<f64> {
    let plane = oh * ow;
    Tensor::from_fn([n, 2, oh, ow], |k| {
        let extent = if (k / plane).is_multiple_of(2) { w } else { h };
        rng.gen_range(0..extent - 1) as f64 + rng.gen_range(0.15..0.85)
    })
}

fn conv_cases(rng: &mut ChaCha8Rng, algo: ConvAlgo, op: &'static str, out: &mut Vec<CaseResult>) -> Result<()> {
    // (n, c, h, w, o, k, stride, padding)
    let shapes = [
        (1, 1, 5, 5, 1, 3, 1, 1),
        (2, 3, 6, 5, 4, 3, 1, 1),
        (1, 2, 8, 8, 3, 4, 2, 1),
        (2, 2, 7, 6, 2, 1, 1, 0),
        (1, 4, 9, 7, 2, 5, 2, 2),
    ];
    for (i, &(n, c, h, w, o, k, s, p)) in shapes.iter().enumerate() {
        let inputs = vec![
            uniform(rng, [n, c, h, w], -1.0, 1.0),
            uniform(rng, [o, c, k, k], -1.0, 1.0),
            uniform(rng, [o], -1.0, 1.0),
        ];
        let r = check(&inputs, |g, v| {
            g.set_conv_algo(algo);
            let y = g.conv2d(v[0], v[1], Some(v[2]), s, p)?;
            project(g, y, i as u64)
        })?;
        out.push(CaseResult::new(op, format!("x{n}x{c}x{h}x{w} w{o}x{c}x{k}x{k} s{s} p{p}"), r));
    }
    Ok(())
}

fn gated_cases(rng: &mut ChaCha8Rng, out: &mut Vec<CaseResult>) -> Result<()> {
    let shapes = [
        (1, 1, 5, 5, 1, 3, Activation::LeakyRelu),
        (2, 3, 6, 6, 4, 3, Activation::Elu),
        (1, 2, 8, 7, 3, 3, Activation::Identity),
        (2, 4, 5, 6, 2, 1, Activation::LeakyRelu),
        (1, 2, 7, 7, 2, 5, Activation::Elu),
    ];
    for (i, &(n, c, h, w, o, k, act)) in shapes.iter().enumerate() {
        let layer = GatedConv::new("gc", GatedConvSpec::same(c, o, k, act));
        let inputs = vec![
            uniform(rng, [n, c, h, w], -1.0, 1.0),
            uniform(rng, [o, c, k, k], -1.0, 1.0),
            uniform(rng, [o], -0.5, 0.5),
            uniform(rng, [o, c, k, k], -1.0, 1.0),
            uniform(rng, [o], -0.5, 0.5),
        ];
        let r = check(&inputs, |g, v| {
            let names = ["gc.feature.weight", "gc.feature.bias", "gc.gate.weight", "gc.gate.bias"];
            let p: Bound = names.iter().zip(&v[1..]).map(|(n, &v)| (n.to_string(), v)).collect();
            let y = layer.forward(g, &p, v[0])?;
            project(g, y, i as u64)
        })?;
        out.push(CaseResult::new("gated_conv", format!("x{n}x{c}x{h}x{w} o{o} k{k} {act:?}"), r));
    }
    Ok(())
}

const MAP_SHAPES: [(usize, usize, usize, usize); 5] = [(1, 1, 2, 2), (1, 3, 4, 4), (2, 2, 6, 4), (2, 3, 4, 8), (1, 5, 8, 6)];

fn resample_cases(rng: &mut ChaCha8Rng, out: &mut Vec<CaseResult>) -> Result<()> {
    for (i, &(n, c, h, w)) in MAP_SHAPES.iter().enumerate() {
        let x = vec![uniform(rng, [n, c, h, w], -1.0, 1.0)];
        let r = check(&x, |g, v| {
            let y = g.downsample2(v[0])?;
            project(g, y, i as u64)
        })?;
        out.push(CaseResult::new("downsample2", format!("{n}x{c}x{h}x{w}"), r));
        let r = check(&x, |g, v| {
            let y = g.upsample2(v[0])?;
            project(g, y, i as u64)
        })?;
        out.push(CaseResult::new("upsample2", format!("{n}x{c}x{h}x{w}"), r));
    }
    Ok(())
}

fn sampler_cases(rng: &mut ChaCha8Rng, out: &mut Vec<CaseResult>) -> Result<()> {
    // (n, c, h, w, oh, ow)
    let shapes = [(1, 1, 4, 4, 2, 2), (1, 3, 5, 6, 3, 4), (2, 2, 6, 5, 4, 4), (2, 3, 8, 8, 5, 3), (1, 4, 7, 9, 6, 6)];
    for (i, &(n, c, h, w, oh, ow)) in shapes.iter().enumerate() {
        let inputs = vec![uniform(rng, [n, c, h, w], -1.0, 1.0), coords(rng, n, oh, ow, w, h)];
        let r = check(&inputs, |g, v| {
            let y = g.grid_sample(v[0], v[1])?;
            project(g, y, i as u64)
        })?;
        out.push(CaseResult::new("grid_sample", format!("src{n}x{c}x{h}x{w} at {oh}x{ow}"), r));
    }
    Ok(())
}

fn mask(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| if rng.gen_bool(0.6) { 1.0 } else { 0.0 })
}

fn loss_cases(rng: &mut ChaCha8Rng, out: &mut Vec<CaseResult>) -> Result<()> {
    for (i, &(n, c, h, w)) in MAP_SHAPES.iter().enumerate() {
        let shape = format!("{n}x{c}x{h}x{w}");
        let pair = vec![uniform(rng, [n, c, h, w], 0.0, 1.0), uniform(rng, [n, c, h, w], 0.0, 1.0)];
        let m = mask(rng, [n, 1, h, w]);
        let r = check(&pair, |g, v| masked_l1(g, v[0], v[1], &m))?;
        out.push(CaseResult::new("masked_l1", shape.clone(), r));
        let window = if i % 2 == 0 { 3 } else { 5 };
        let r = check(&pair, |g, v| g.nn_loss(v[0], v[1], window))?;
        out.push(CaseResult::new("nn_loss", format!("{shape} window {window}"), r));
        let logits = vec![uniform(rng, [n, 1, h, w], -3.0, 3.0), uniform(rng, [n, 1, h, w], -3.0, 3.0)];
        let r = check(&logits, |g, v| Ok(gan_generator_loss(g, v[1])))?;
        out.push(CaseResult::new("gan_generator", format!("{n}x1x{h}x{w}"), r));
        let r = check(&logits, |g, v| gan_discriminator_loss(g, v[0], v[1]))?;
        out.push(CaseResult::new("gan_discriminator", format!("{n}x1x{h}x{w}"), r));
    }

    let fx = FeatureExtractor::new(FeatureExtractorConfig {
        widths: [3, 4, 4],
        ..FeatureExtractorConfig::default()
    })?;
    for &(n, h, w) in &[(1, 4, 4), (1, 8, 8), (2, 8, 4), (1, 12, 8), (2, 4, 12)] {
        let pair = vec![uniform(rng, [n, 3, h, w], 0.0, 1.0), uniform(rng, [n, 3, h, w], 0.0, 1.0)];
        let r = check(&pair, |g, v| fx.feature_loss(g, v[0], v[1]))?;
        out.push(CaseResult::new("feature_loss", format!("{n}x3x{h}x{w}"), r));
        let r = check(&pair, |g, v| fx.style_loss(g, v[0], v[1]))?;
        out.push(CaseResult::new("style_loss", format!("{n}x3x{h}x{w}"), r));
    }

    // Gradient w.r.t. the predicted coordinates flows through both the
    // coordinate term and the sampled-colour term.
    for &(n, th, tw, h, w) in &[(1, 2, 2, 4, 4), (1, 4, 4, 6, 6), (2, 4, 3, 8, 5), (2, 3, 5, 5, 9), (1, 6, 6, 10, 8)] {
        let d = coords(rng, n, th, tw, w, h);
        let source = uniform(rng, [n, 3, h, w], 0.0, 1.0);
        let targets = Stage1Targets {
            coords: coords(rng, n, th, tw, w, h),
            coords_known: mask(rng, [n, 1, th, tw]),
            color: uniform(rng, [n, 3, th, tw], 0.0, 1.0),
            color_known: mask(rng, [n, 1, th, tw]),
            extent: (w, h),
        };
        let weights = Stage1Weights { coord: 1.0, color: 0.7 };
        let r = check(&[d, source], |g, v: &[Var]| Ok(stage1_loss(g, v[0], v[1], &targets, weights)?.total))?;
        out.push(CaseResult::new("stage1_loss", format!("D{n}x2x{th}x{tw} S{n}x3x{h}x{w}"), r));
    }
    Ok(())
}

/// Runs every case; inputs are drawn from a generator seeded with `seed`.
pub fn run_suite(seed: u64) -> Result<Vec<CaseResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    conv_cases(&mut rng, ConvAlgo::Im2col, "conv2d", &mut out)?;
    conv_cases(&mut rng, ConvAlgo::Direct, "conv2d_direct", &mut out)?;
    gated_cases(&mut rng, &mut out)?;
    resample_cases(&mut rng, &mut out)?;
    sampler_cases(&mut rng, &mut out)?;
    loss_cases(&mut rng, &mut out)?;
    Ok(out)
}

//! The identity-completion toy task: the inpainter sees a fully known
//! coordinate texture and must reproduce it.

use serde::{Deserialize, Serialize};

use crate::data::synth::smooth_coord_map;
use crate::error::{Error, Result};
use crate::loss::masked_l1;
use crate::nn::{Inpainter, InpainterConfig, InpainterOutput, ParamStore};
use crate::tensor::optim::{cosine_annealed, AdamConfig, AdamState};
use crate::tensor::{Graph, Tensor};
use crate::warp::CoordMap;

use super::prepare::scene_seed;
use crate::data::dataset::Split;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentityCompletionConfig {
    pub inpainter: InpainterConfig,
    pub image_extent: (usize, usize),
    pub texture_extent: (usize, usize),
    pub train_maps: usize,
    pub test_maps: usize,
    pub max_steps: usize,
    pub batch_size: usize,
    /// Held-out evaluation interval; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Stop once held-out error drops below this many pixels.
    pub target_px: f64,
    pub adam: AdamConfig,
    /// Learning rate at `max_steps` relative to the initial one (cosine decay).
    pub final_lr_fraction: f64,
    pub seed: u64,
}

impl Default for IdentityCompletionConfig {
    fn default() -> Self {
        IdentityCompletionConfig {
            inpainter: InpainterConfig {
                output: InpainterOutput::Coordinates,
                ..InpainterConfig::default()
            },
            image_extent: (64, 64),
            texture_extent: (32, 32),
            train_maps: 256,
            test_maps: 16,
            max_steps: 2000,
            batch_size: 4,
            eval_every: 100,
            target_px: 1.0,
            adam: AdamConfig::default(),
            final_lr_fraction: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IdentityCompletionOutcome {
    pub params: ParamStore<f32>,
    /// Steps taken before stopping.
    pub steps: usize,
    /// `(step, held-out error in pixels)` at each evaluation.
    pub history: Vec<(usize, f64)>,
}

impl IdentityCompletionOutcome {
    pub fn final_error_px(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |&(_, e)| e)
    }
}

/// Mean over known texels of `|Δx| + |Δy|`, in pixels.
pub fn coord_error_px(pred: &CoordMap, truth: &CoordMap) -> Result<f64> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(Error::shape(
            "coord_error_px",
            format!("{}x{}", truth.width(), truth.height()),
            format!("{}x{}", pred.width(), pred.height()),
        ));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for k in 0..truth.known().len() {
        if truth.known()[k] {
            sum += (pred.xs()[k] - truth.xs()[k]).abs() as f64 + (pred.ys()[k] - truth.ys()[k]).abs() as f64;
            n += 1;
        }
    }
    Ok(sum / n.max(1) as f64)
}

fn maps(cfg: &IdentityCompletionConfig, split: Split, n: usize) -> Vec<CoordMap> {
    let (tw, th) = cfg.texture_extent;
    (0..n)
        .map(|i| smooth_coord_map(scene_seed(cfg.seed, split, i), tw, th, cfg.image_extent))
        .collect()
}

fn held_out_error(net: &Inpainter, params: &ParamStore<f32>, test: &[CoordMap], extent: (usize, usize)) -> Result<f64> {
    let mut total = 0.0;
    for c in test {
        let d = net.inpaint_coords(params, c, extent)?;
        total += coord_error_px(&d, c)?;
    }
    Ok(total / test.len().max(1) as f64)
}

pub fn train_identity_completion(cfg: &IdentityCompletionConfig) -> Result<IdentityCompletionOutcome> {
    if cfg.inpainter.output != InpainterOutput::Coordinates {
        return Err(Error::invalid("identity completion needs a coordinate inpainter"));
    }
    if cfg.train_maps == 0 || cfg.test_maps == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("identity completion needs non-empty map sets and batches"));
    }
    let net = Inpainter::new(cfg.inpainter.clone())?;
    let mut params = net.init_params::<f32>(cfg.seed)?;
    let train = maps(cfg, Split::Train, cfg.train_maps);
    let test = maps(cfg, Split::Test, cfg.test_maps);
    let extent = cfg.image_extent;
    let inv = [1.0 / extent.0 as f32, 1.0 / extent.1 as f32];
    let mut state = AdamState::new();
    let mut history = Vec::new();
    let mut steps = 0;
    for step in 0..cfg.max_steps {
        let picks: Vec<&CoordMap> = (0..cfg.batch_size)
            .map(|b| &train[(step * cfg.batch_size + b) % train.len()])
            .collect();
        let x = Tensor::cat_batch(&picks.iter().map(|c| c.network_input::<f32>(extent)).collect::<Vec<_>>())?;
        let y = Tensor::cat_batch(&picks.iter().map(|c| c.to_tensor::<f32>()).collect::<Vec<_>>())?;
        let known = Tensor::cat_batch(&picks.iter().map(|c| c.mask_tensor::<f32>()).collect::<Vec<_>>())?;
        let mut g = Graph::new();
        let p = params.bind(&mut g, true);
        let xv = g.constant(x);
        let d = net.forward(&mut g, &p, xv, extent)?;
        let dn = g.channel_affine(d, &inv, &[0.0; 2])?;
        let yv = g.constant(y);
        let yn = g.channel_affine(yv, &inv, &[0.0; 2])?;
        let loss = masked_l1(&mut g, dn, yn, &known)?;
        let v = g.value(loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("identity completion loss={v}"),
            });
        }
        g.backward(loss)?;
        let adam = cosine_annealed(&cfg.adam, cfg.final_lr_fraction, step, cfg.max_steps);
        params.adam_update(&g, &p, &mut state, &adam)?;
        steps = step + 1;
        if cfg.eval_every > 0 && steps % cfg.eval_every == 0 {
            let e = held_out_error(&net, &params, &test, extent)?;
            history.push((steps, e));
            if e < cfg.target_px {
                break;
            }
        }
    }
    if history.last().map(|&(s, _)| s) != Some(steps) {
        history.push((steps, held_out_error(&net, &params, &test, extent)?));
    }
    Ok(IdentityCompletionOutcome { params, steps, history })
}

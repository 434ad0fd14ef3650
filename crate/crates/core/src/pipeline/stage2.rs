use std::path::Path;

use indexmap::IndexMap;

use crate::data::checkpoint::save_checkpoint;
use crate::data::dataset::Split;
use crate::error::{Error, Result};
use crate::loss::{gan_discriminator_loss, gan_generator_loss, FeatureExtractor, LossReport};
use crate::nn::{Discriminator, Inpainter, ParamStore, Refiner, RefinerInput};
use crate::tensor::optim::AdamState;
use crate::tensor::{Graph, Tensor};
use crate::warp::{Image, UvMap};

use super::config::PipelineConfig;
use super::prepare::{complete_textures, garment_view, identity_from_view, stage1_inputs, stage2_inputs, PairSource, Stage2Batch};
use super::{batch_stream, check_finite, TrainLog, REFINER_CKPT, STAGE2_LOG};

pub struct Stage2Outcome {
    pub refiner: ParamStore<f32>,
    pub discriminator: ParamStore<f32>,
    pub log: TrainLog,
}

impl Stage2Outcome {
    /// Refiner and discriminator weights in one table.
    pub fn combined(&self) -> Result<ParamStore<f32>> {
        let mut all = self.refiner.clone();
        all.extend(self.discriminator.clone())?;
        Ok(all)
    }
}

struct Batch {
    inputs: Stage2Batch,
    target: Tensor<f32>,
}

/// Refiner inputs for a batch of pairs, running the frozen inpainter.
pub(crate) fn prepare_stage2(
    cfg: &PipelineConfig,
    f: &Inpainter,
    f_params: &ParamStore<f32>,
    pairs: &[super::Pair],
) -> Result<(Stage2Batch, Tensor<f32>)> {
    let tex = cfg.texture_extent();
    let views: Vec<(Image, UvMap)> = pairs
        .iter()
        .map(|p| {
            if cfg.garment_transfer {
                garment_view(&p.source, &p.source_uv, cfg.scene.identity_band)
            } else {
                (p.source.clone(), p.source_uv.clone())
            }
        })
        .collect();
    let s1 = views
        .iter()
        .map(|(img, uv)| stage1_inputs(cfg.ablation, img, uv, None, tex))
        .collect::<Result<Vec<_>>>()?;
    let sources: Vec<_> = views.iter().map(|(img, _)| img).collect();
    let completed = complete_textures(f, f_params, &s1.iter().collect::<Vec<_>>(), &sources)?;
    let mut items = Vec::with_capacity(pairs.len());
    for ((p, (img, uv)), c) in pairs.iter().zip(&views).zip(&completed) {
        let identity = if cfg.garment_transfer {
            Some(identity_from_view(&p.target, &p.target_uv, cfg.scene.identity_band)?)
        } else {
            None
        };
        items.push(stage2_inputs(cfg.ablation, img, uv, &p.target_uv, c, identity)?);
    }
    let batch = Stage2Batch::new(&items.iter().collect::<Vec<_>>())?;
    let target = Tensor::cat_batch(&pairs.iter().map(|p| p.target.to_tensor()).collect::<Vec<_>>())?;
    Ok((batch, target))
}

fn ckpt_path(dir: &Path, step: Option<usize>) -> std::path::PathBuf {
    match step {
        Some(s) => dir.join(format!("refiner_step{s:06}.ckpt")),
        None => dir.join(REFINER_CKPT),
    }
}

/// Trains the refiner `g` and the discriminator against the frozen
/// inpainter weights `f_params`. Generator and discriminator updates
/// alternate one to one; the discriminator is skipped when the adversarial
/// weight is zero.
pub fn train_stage2(cfg: &PipelineConfig, f_params: &ParamStore<f32>, out_dir: Option<&Path>) -> Result<Stage2Outcome> {
    cfg.validate()?;
    let f = Inpainter::new(cfg.inpainter_config())?;
    let g_net = Refiner::new(cfg.refiner_config())?;
    let d_net = Discriminator::new(cfg.discriminator_config())?;
    let fx = FeatureExtractor::new(cfg.features.clone())?;
    let mut g_params = g_net.init_params::<f32>(cfg.seed ^ 0x6e74_0002)?;
    let mut d_params = d_net.init_params::<f32>(cfg.seed ^ 0x6e74_0003)?;
    let source = PairSource::for_split(cfg, Split::Train)?;
    if source.is_empty() {
        return Err(Error::invalid("dataset is empty: no training pairs"));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let prep_cfg = cfg.clone();
    let prep_f = f.clone();
    let prep_params = f_params.clone();
    let batches = batch_stream(
        source,
        cfg.stage2.steps,
        cfg.stage2.batch_size,
        cfg.seed ^ 0x5747_0002,
        cfg.prefetch,
        move |pairs| {
            let (inputs, target) = prepare_stage2(&prep_cfg, &prep_f, &prep_params, &pairs)?;
            Ok(Batch { inputs, target })
        },
    );
    let w = cfg.stage2_weights;
    let adversarial = w.adversarial != 0.0;
    let mut g_state = AdamState::new();
    let mut d_state = AdamState::new();
    let mut log = TrainLog::default();
    let json = cfg.to_json();
    for (step, batch) in batches.enumerate() {
        let Batch { inputs, target } = batch?;
        let mut g = Graph::new();
        let pg = g_params.bind(&mut g, true);
        let tv = g.constant(inputs.target_stack.clone());
        let sv = g.constant(inputs.source_stack.clone());
        let idv = inputs.identity.clone().map(|t| g.constant(t));
        let out = g_net.forward(
            &mut g,
            &pg,
            &RefinerInput {
                target: tv,
                source: sv,
                identity_cond: idv,
                warp: inputs.warp.as_ref(),
            },
        )?;
        let real = g.constant(target.clone());
        let nn = g.nn_loss(out, real, w.nn_window)?;
        let (feat, style) = fx.perceptual(&mut g, out, real)?;
        let mut total = g.scale(nn, w.nn as f32);
        let fw = g.scale(feat, w.feature as f32);
        total = g.add(total, fw)?;
        let sw = g.scale(style, w.style as f32);
        total = g.add(total, sw)?;
        let mut adv_g = 0.0;
        if adversarial {
            let pd = d_params.bind(&mut g, false);
            let cond = g.constant(inputs.cond.clone());
            let logits = d_net.forward(&mut g, &pd, out, cond)?;
            let gl = gan_generator_loss(&mut g, logits);
            adv_g = g.value(gl).item() as f64;
            let aw = g.scale(gl, w.adversarial as f32);
            total = g.add(total, aw)?;
        }
        let fake = g.value(out).clone();
        let l1 = fake
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / fake.numel() as f64;
        let mut terms = IndexMap::new();
        terms.insert("nn_loss".to_owned(), g.value(nn).item() as f64);
        terms.insert("feature".to_owned(), g.value(feat).item() as f64);
        terms.insert("style".to_owned(), g.value(style).item() as f64);
        terms.insert("adv_g".to_owned(), adv_g);
        let mut report = LossReport {
            terms,
            total: g.value(total).item() as f64,
        };
        check_finite(step, &report)?;
        g.backward(total)?;
        g_params.adam_update(&g, &pg, &mut g_state, &cfg.stage2.adam_at(step))?;
        drop(g);

        let mut adv_d = 0.0;
        if adversarial {
            let mut g = Graph::new();
            let pd = d_params.bind(&mut g, true);
            let cond = g.constant(inputs.cond);
            let real = g.constant(target);
            let fake = g.constant(fake);
            let lr = d_net.forward(&mut g, &pd, real, cond)?;
            let lf = d_net.forward(&mut g, &pd, fake, cond)?;
            let dl = gan_discriminator_loss(&mut g, lr, lf)?;
            adv_d = g.value(dl).item() as f64;
            if !adv_d.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    detail: format!("adv_d={adv_d}"),
                });
            }
            g.backward(dl)?;
            d_params.adam_update(&g, &pd, &mut d_state, &cfg.stage2.adam_at(step))?;
        }
        report.terms.insert("adv_d".to_owned(), adv_d);
        report.terms.insert("l1".to_owned(), l1);
        log.push(step, report);

        if let Some(dir) = out_dir {
            let every = cfg.stage2.checkpoint_every;
            if every > 0 && (step + 1) % every == 0 {
                let mut all = g_params.clone();
                all.extend(d_params.clone())?;
                save_checkpoint(ckpt_path(dir, Some(step + 1)), &all, Some(&json))?;
            }
        }
    }
    let outcome = Stage2Outcome {
        refiner: g_params,
        discriminator: d_params,
        log,
    };
    if let Some(dir) = out_dir {
        save_checkpoint(ckpt_path(dir, None), &outcome.combined()?, Some(&json))?;
        outcome.log.write_csv(dir.join(STAGE2_LOG))?;
    }
    Ok(outcome)
}

use std::path::Path;

use indexmap::IndexMap;

use crate::data::checkpoint::save_checkpoint;
use crate::data::dataset::Split;
use crate::error::{Error, Result};
use crate::loss::{masked_l1, stage1_loss, LossReport, Stage1Targets};
use crate::nn::{Inpainter, ParamStore};
use crate::tensor::optim::AdamState;
use crate::tensor::{Graph, Tensor};

use super::config::PipelineConfig;
use super::prepare::{stage1_inputs, PairSource, Stage1Inputs};
use super::{batch_stream, check_finite, TrainLog, INPAINTER_CKPT, STAGE1_LOG};

pub struct Stage1Outcome {
    pub params: ParamStore<f32>,
    pub log: TrainLog,
}

struct Batch {
    input: Tensor<f32>,
    coords: Tensor<f32>,
    coords_known: Tensor<f32>,
    source_tex: Tensor<f32>,
    source_known: Tensor<f32>,
    target_tex: Tensor<f32>,
    target_known: Tensor<f32>,
    source: Tensor<f32>,
}

impl Batch {
    fn new(items: &[Stage1Inputs]) -> Result<Self> {
        let cat = |f: &dyn Fn(&Stage1Inputs) -> Tensor<f32>| Tensor::cat_batch(&items.iter().map(f).collect::<Vec<_>>());
        Ok(Batch {
            input: cat(&|s| s.net_input.clone())?,
            coords: cat(&|s| s.coords.to_tensor())?,
            coords_known: cat(&|s| s.coords.mask_tensor())?,
            source_tex: cat(&|s| s.source_tex.clone())?,
            source_known: cat(&|s| s.source_known.clone())?,
            target_tex: cat(&|s| s.target_tex.clone())?,
            target_known: cat(&|s| s.target_known.clone())?,
            source: cat(&|s| s.source.clone())?,
        })
    }
}

fn ckpt_path(dir: &Path, step: Option<usize>) -> std::path::PathBuf {
    match step {
        Some(s) => dir.join(format!("inpainter_step{s:06}.ckpt")),
        None => dir.join(INPAINTER_CKPT),
    }
}

/// Trains the inpainter `f`. With `out_dir`, writes periodic and final
/// checkpoints (with the configuration as a sidecar) and the loss log.
pub fn train_stage1(cfg: &PipelineConfig, out_dir: Option<&Path>) -> Result<Stage1Outcome> {
    cfg.validate()?;
    let net = Inpainter::new(cfg.inpainter_config())?;
    let mut params = net.init_params::<f32>(cfg.seed)?;
    let source = PairSource::for_split(cfg, Split::Train)?;
    if source.is_empty() {
        return Err(Error::invalid("dataset is empty: no training pairs"));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let ablation = cfg.ablation;
    let tex = cfg.texture_extent();
    let batches = batch_stream(
        source,
        cfg.stage1.steps,
        cfg.stage1.batch_size,
        cfg.seed ^ 0x5747_0001,
        cfg.prefetch,
        move |pairs| {
            let items = pairs
                .iter()
                .map(|p| stage1_inputs(ablation, &p.source, &p.source_uv, Some((&p.target, &p.target_uv)), tex))
                .collect::<Result<Vec<_>>>()?;
            Batch::new(&items)
        },
    );
    let extent = cfg.image_extent();
    let mut state = AdamState::new();
    let mut log = TrainLog::default();
    let json = cfg.to_json();
    for (step, batch) in batches.enumerate() {
        let b = batch?;
        let mut g = Graph::new();
        let p = params.bind(&mut g, true);
        let x = g.constant(b.input);
        let d = net.forward(&mut g, &p, x, extent)?;
        let (total, report) = if ablation.uses_coordinates() {
            let src = g.constant(b.source);
            let targets = Stage1Targets {
                coords: b.coords,
                coords_known: b.coords_known,
                color: b.target_tex,
                color_known: b.target_known,
                extent,
            };
            let l = stage1_loss(&mut g, d, src, &targets, cfg.stage1_weights)?;
            (l.total, l.report(&g))
        } else {
            let s = g.constant(b.source_tex);
            let src_term = masked_l1(&mut g, d, s, &b.source_known)?;
            let t = g.constant(b.target_tex);
            let tgt_term = masked_l1(&mut g, d, t, &b.target_known)?;
            let a = g.scale(src_term, cfg.stage1_weights.coord as f32);
            let c = g.scale(tgt_term, cfg.stage1_weights.color as f32);
            let total = g.add(a, c)?;
            let mut terms = IndexMap::new();
            terms.insert("stage1_source_l1".to_owned(), g.value(src_term).item() as f64);
            terms.insert("stage1_color_l1".to_owned(), g.value(tgt_term).item() as f64);
            let report = LossReport {
                terms,
                total: g.value(total).item() as f64,
            };
            (total, report)
        };
        check_finite(step, &report)?;
        g.backward(total)?;
        params.adam_update(&g, &p, &mut state, &cfg.stage1.adam_at(step))?;
        log.push(step, report);
        if let Some(dir) = out_dir {
            let every = cfg.stage1.checkpoint_every;
            if every > 0 && (step + 1) % every == 0 {
                save_checkpoint(ckpt_path(dir, Some(step + 1)), &params, Some(&json))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(ckpt_path(dir, None), &params, Some(&json))?;
        log.write_csv(dir.join(STAGE1_LOG))?;
    }
    Ok(Stage1Outcome { params, log })
}

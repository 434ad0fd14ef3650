use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss::ssim;
use crate::warp::Image;

use super::infer::{Pipeline, Query};
use super::prepare::PairSource;

const EVAL_BATCH: usize = 8;

/// Held-out metrics of one pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub pair: String,
    pub ssim: f64,
    /// Mean absolute image error over all pixels and channels.
    pub l1: f64,
    /// Mean absolute error of the completed texture; absent without ground truth.
    pub texture_l1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl EvalReport {
    pub fn mean_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim)).unwrap_or(f64::NAN)
    }

    pub fn mean_l1(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.l1)).unwrap_or(f64::NAN)
    }

    pub fn mean_texture_l1(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.texture_l1))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean absolute difference of two equally sized planar buffers.
pub fn mean_abs_diff(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("mean_abs_diff", a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64)
}

/// Image metrics of a prediction against ground truth.
pub fn image_metrics(pred: &Image, truth: &Image) -> Result<(f64, f64)> {
    Ok((ssim(pred, truth)?, mean_abs_diff(pred.planar(), truth.planar())?))
}

/// Runs the pipeline on every pair of `pairs` and scores the results.
pub fn evaluate(pipeline: &Pipeline, pairs: &PairSource) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(pairs.len());
    let band = pipeline.config.scene.identity_band;
    let garment = pipeline.config.garment_transfer;
    let indices: Vec<usize> = (0..pairs.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let loaded = chunk.iter().map(|&i| pairs.get(i)).collect::<Result<Vec<_>>>()?;
        let masks: Vec<Vec<bool>> = loaded
            .iter()
            .map(|p| crate::data::synth::identity_mask(&p.target_uv, band))
            .collect();
        let queries: Vec<Query<'_>> = loaded
            .iter()
            .zip(&masks)
            .map(|(p, m)| Query {
                source: &p.source,
                source_uv: &p.source_uv,
                target_uv: &p.target_uv,
                identity: garment.then_some((&p.target, m.as_slice())),
            })
            .collect();
        let results = pipeline.run(&queries)?;
        for ((&i, p), r) in chunk.iter().zip(&loaded).zip(results) {
            let (s, l1) = image_metrics(&r.output, &p.target)?;
            let texture_l1 = match &p.texture {
                Some(t) => Some(mean_abs_diff(r.intermediates.texture.planar(), t.planar())?),
                None => None,
            };
            rows.push(EvalRow {
                pair: pairs.label(i),
                ssim: s,
                l1,
                texture_l1,
            });
        }
    }
    Ok(EvalReport { rows })
}

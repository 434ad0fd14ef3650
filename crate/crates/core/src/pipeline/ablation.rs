use std::collections::HashMap;
use std::time::{Duration, Instant};

use crate::data::dataset::Split;
use crate::error::Result;
use crate::nn::ParamStore;

use super::config::{Ablation, PipelineConfig};
use super::eval::{evaluate, EvalReport};
use super::infer::Pipeline;
use super::prepare::PairSource;
use super::stage1::train_stage1;
use super::stage2::train_stage2;

/// One trained and evaluated variant.
#[derive(Clone, Debug)]
pub struct AblationRun {
    pub ablation: Ablation,
    pub seed: u64,
    pub report: EvalReport,
    /// Wall time of stage 1 (zero when reused) plus stage 2 and evaluation.
    pub elapsed: Duration,
}

/// Trains and evaluates each variant under each seed on the held-out split
/// of `base`. Variants that share a stage-1 output kind reuse one inpainter
/// per seed.
pub fn run_ablation(base: &PipelineConfig, variants: &[Ablation], seeds: &[u64]) -> Result<Vec<AblationRun>> {
    let mut runs = Vec::with_capacity(variants.len() * seeds.len());
    let test = PairSource::for_split(base, Split::Test)?;
    for &seed in seeds {
        let mut stage1: HashMap<bool, ParamStore<f32>> = HashMap::new();
        for &ablation in variants {
            let start = Instant::now();
            let cfg = PipelineConfig {
                ablation,
                seed,
                ..base.clone()
            };
            let key = ablation.uses_coordinates();
            if let std::collections::hash_map::Entry::Vacant(e) = stage1.entry(key) {
                e.insert(train_stage1(&cfg, None)?.params);
            }
            let f_params = stage1[&key].clone();
            let s2 = train_stage2(&cfg, &f_params, None)?;
            let pipeline = Pipeline::new(cfg, f_params, &s2.refiner)?;
            let report = evaluate(&pipeline, &test)?;
            runs.push(AblationRun {
                ablation,
                seed,
                report,
                elapsed: start.elapsed(),
            });
        }
    }
    Ok(runs)
}

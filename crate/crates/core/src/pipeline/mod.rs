//! Two-stage training, inference, garment transfer and evaluation.

pub mod ablation;
pub mod config;
pub mod eval;
pub mod identity;
pub mod infer;
pub mod prepare;
pub mod stage1;
pub mod stage2;

pub use ablation::{run_ablation, AblationRun};
pub use config::{Ablation, PipelineConfig, Schedule};
pub use eval::{evaluate, EvalReport, EvalRow};
pub use identity::{train_identity_completion, IdentityCompletionConfig, IdentityCompletionOutcome};
pub use infer::{Inference, Intermediates, Pipeline};
pub use prepare::{Pair, PairSource};
pub use stage1::{train_stage1, Stage1Outcome};
pub use stage2::{train_stage2, Stage2Outcome};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Prefetcher;
use crate::error::{Error, Result};
use crate::loss::LossReport;

pub const INPAINTER_CKPT: &str = "inpainter.ckpt";
pub const REFINER_CKPT: &str = "refiner.ckpt";
pub const STAGE1_LOG: &str = "stage1_log.csv";
pub const STAGE2_LOG: &str = "stage2_log.csv";

/// Per-step loss terms of a training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<(usize, LossReport)>,
}

impl TrainLog {
    pub fn push(&mut self, step: usize, report: LossReport) {
        self.rows.push((step, report));
    }

    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|(_, r)| r.total).collect()
    }

    pub fn term(&self, name: &str) -> Vec<f64> {
        self.rows.iter().filter_map(|(_, r)| r.get(name)).collect()
    }

    /// CSV with columns `step, total, <terms…>`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let names: Vec<String> = self
            .rows
            .first()
            .map(|(_, r)| r.terms.keys().cloned().collect())
            .unwrap_or_default();
        let mut header = vec!["step".to_owned(), "total".to_owned()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for (step, r) in &self.rows {
            let mut rec = vec![step.to_string(), r.total.to_string()];
            rec.extend(names.iter().map(|n| r.get(n).map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn check_finite(step: usize, report: &LossReport) -> Result<()> {
    if report.total.is_finite() && report.terms.values().all(|v| v.is_finite()) {
        return Ok(());
    }
    let detail = report
        .terms
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ");
    Err(Error::NonFinite {
        step,
        detail: format!("total={} {detail}", report.total),
    })
}

/// Prepared batches for `steps` steps, drawn uniformly with replacement
/// from `source` by a generator seeded with `seed`.
pub(crate) fn batch_stream<T, F>(
    source: PairSource,
    steps: usize,
    batch_size: usize,
    seed: u64,
    capacity: usize,
    mut prepare: F,
) -> Prefetcher<Result<T>>
where
    T: Send + 'static,
    F: FnMut(Vec<Pair>) -> Result<T> + Send + 'static,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Prefetcher::spawn(capacity, move |step| {
        if step >= steps {
            return None;
        }
        let picks: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..source.len())).collect();
        let pairs: Result<Vec<Pair>> = picks.into_iter().map(|i| source.get(i)).collect();
        Some(pairs.and_then(&mut prepare))
    })
}

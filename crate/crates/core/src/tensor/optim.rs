//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T> {
    step: u64,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Element> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// One Adam update of `params` in place. A `None` gradient leaves that
/// tensor and its moments untouched (apart from the shared step counter).
pub fn adam_step<T: Element>(
    params: &mut [&mut Tensor<T>],
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("adam_step", params.len(), format!("{} gradients", grads.len())));
    }
    if state.moments.is_empty() {
        state.moments = params
            .iter()
            .map(|p| (vec![T::zero(); p.numel()], vec![T::zero(); p.numel()]))
            .collect();
    }
    if state.moments.len() != params.len() {
        return Err(Error::shape("adam_step state", state.moments.len(), params.len()));
    }
    for ((p, g), (m, _)) in params.iter().zip(grads).zip(&state.moments) {
        if let Some(g) = g {
            if g.shape() != p.shape() || m.len() != p.numel() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{:?}", p.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = cfg.beta1;
    let b2 = cfg.beta2;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.moments.iter_mut()) {
        let Some(g) = g else { continue };
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gf = gv.as_f64();
            let mf = b1 * mv.as_f64() + (1.0 - b1) * gf;
            let vf = b2 * vv.as_f64() + (1.0 - b2) * gf * gf;
            *mv = T::from_f64_lossy(mf);
            *vv = T::from_f64_lossy(vf);
            let update = cfg.lr * (mf / c1) / ((vf / c2).sqrt() + cfg.eps);
            *pv = T::from_f64_lossy(pv.as_f64() - update);
        }
    }
    Ok(())
}

/// `cfg` with its rate annealed along a half cosine from `lr` at step 0 to
/// `final_fraction·lr` at step `total`.
pub fn cosine_annealed(cfg: &AdamConfig, final_fraction: f64, step: usize, total: usize) -> AdamConfig {
    let t = if total == 0 { 0.0 } else { (step as f64 / total as f64).min(1.0) };
    let f = final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
    AdamConfig { lr: cfg.lr * f, ..*cfg }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::<f64>::new([3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new();
        adam_step(&mut [&mut p], &[Some(Tensor::zeros([3]))], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn single_step_hand_value() {
        // m = 0.1, v = 0.001; bias-corrected both are 1, so the step is
        // lr / (1 + eps).
        let mut p = Tensor::<f64>::scalar(1.0);
        let mut st = AdamState::new();
        adam_step(&mut [&mut p], &[Some(Tensor::scalar(1.0))], &mut st, &AdamConfig::default()).unwrap();
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p.item() - expected).abs() < 1e-15);
        assert!((p.item() - 0.999).abs() < 1e-10);
    }

    #[test]
    fn cosine_annealing_endpoints() {
        let c = AdamConfig { lr: 2.0, ..AdamConfig::default() };
        assert_eq!(cosine_annealed(&c, 0.1, 0, 100).lr, 2.0);
        assert!((cosine_annealed(&c, 0.1, 50, 100).lr - 1.1).abs() < 1e-12);
        assert!((cosine_annealed(&c, 0.1, 100, 100).lr - 0.2).abs() < 1e-12);
        assert_eq!(cosine_annealed(&c, 1.0, 30, 100).lr, 2.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::<f32>::zeros([2]);
        let mut st = AdamState::new();
        let r = adam_step(&mut [&mut p], &[Some(Tensor::zeros([3]))], &mut st, &AdamConfig::default());
        assert!(r.is_err());
    }
}

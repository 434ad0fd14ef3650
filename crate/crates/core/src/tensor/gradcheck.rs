//! Central finite-difference gradient checking in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{Graph, Tensor, Var};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradReport {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` per input.
    pub relative: Vec<f64>,
    /// Largest per-element `|a − n| / max(|a|, |n|, floor)` across inputs.
    pub max_elementwise: f64,
    /// Largest per-element `|a − n|` across inputs.
    pub max_absolute: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn max_relative(&self) -> f64 {
        self.relative.iter().copied().fold(0.0, f64::max)
    }
}

/// Default central-difference step.
pub const STEP: f64 = 1e-6;
/// Gradients smaller than this are compared absolutely.
pub const ELEMENT_FLOOR: f64 = 1e-6;

/// Scalarises a tensor output with a fixed random projection, so that
/// non-scalar ops can be checked through `backward`.
pub fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(out).to_vec();
    let r = Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let r = g.constant(r);
    let prod = g.mul(out, r)?;
    Ok(g.sum(prod))
}

fn evaluate<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Analytic gradients of the scalar `f(inputs)` w.r.t. every input.
pub fn analytic<F>(inputs: &[Tensor<f64>], f: &F) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect())
}

/// Compares analytic gradients with central differences on every element
/// of every input.
pub fn check<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let all: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |e| (i, e)))
        .collect();
    check_elements(inputs, &all, f)
}

/// Like [`check`] but only for the listed `(input, element)` pairs.
pub fn check_elements<F>(inputs: &[Tensor<f64>], which: &[(usize, usize)], f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let analytic = analytic(inputs, &f)?;
    let mut num = vec![0.0; inputs.len()];
    let mut den_a = vec![0.0; inputs.len()];
    let mut den_n = vec![0.0; inputs.len()];
    let mut max_el = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for &(i, e) in which {
        if i >= inputs.len() || e >= inputs[i].numel() {
            return Err(Error::invalid(format!("gradcheck element ({i}, {e}) out of range")));
        }
        let x0 = inputs[i].data()[e];
        work[i].data_mut()[e] = x0 + STEP;
        let fp = evaluate(&work, &f)?;
        work[i].data_mut()[e] = x0 - STEP;
        let fm = evaluate(&work, &f)?;
        work[i].data_mut()[e] = x0;
        let n = (fp - fm) / (2.0 * STEP);
        let a = analytic[i].data()[e];
        num[i] += (a - n).powi(2);
        den_a[i] += a * a;
        den_n[i] += n * n;
        let el = (a - n).abs() / a.abs().max(n.abs()).max(ELEMENT_FLOOR);
        max_el = max_el.max(el);
        max_abs = max_abs.max((a - n).abs());
    }
    let relative = (0..inputs.len())
        .map(|i| {
            let d = den_a[i].sqrt().max(den_n[i].sqrt());
            if d == 0.0 {
                0.0
            } else {
                num[i].sqrt() / d
            }
        })
        .collect();
    Ok(GradReport {
        relative,
        max_elementwise: max_el,
        max_absolute: max_abs,
        checked: which.len(),
    })
}

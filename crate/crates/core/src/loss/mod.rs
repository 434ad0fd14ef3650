//! Training objectives and the SSIM metric.

mod feature;
mod ssim;

pub use feature::{FeatureExtractor, FeatureExtractorConfig};
pub use ssim::{ssim, ssim_map, ssim_masked, ssim_planes, SsimMap, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

/// Named scalar loss terms and their weighted total.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub terms: IndexMap<String, f64>,
    pub total: f64,
}

impl LossReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.get(name).copied()
    }
}

/// `Σ mask·|a − b| / max(Σ mask, 1)`.
///
/// `mask` has the shape of `a`, or is `N×1×H×W` and is repeated over the
/// channels of `a`. The denominator is the sum of `mask` as given.
pub fn masked_l1<T: Element>(g: &mut Graph<T>, a: Var, b: Var, mask: &Tensor<T>) -> Result<Var> {
    let shape = g.shape(a).to_vec();
    let full = if mask.shape() == shape.as_slice() {
        mask.clone()
    } else {
        let (n, c, h, w) = g.value(a).dims4()?;
        if mask.shape() != [n, 1, h, w] {
            return Err(Error::shape("masked_l1 mask", format!("{shape:?} or [{n}, 1, {h}, {w}]"), format!("{:?}", mask.shape())));
        }
        mask.repeat_channels(c)?
    };
    let denom = mask.sum().max(T::one());
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    let m = g.constant(full);
    let d = g.mul(d, m)?;
    let s = g.sum(d);
    Ok(g.scale(s, T::one() / denom))
}

/// Relative weights of the two coordinate-stage terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Weights {
    pub coord: f64,
    pub color: f64,
}

impl Default for Stage1Weights {
    fn default() -> Self {
        Stage1Weights { coord: 1.0, color: 1.0 }
    }
}

/// Constant inputs of the coordinate-stage objective, batched `N×…`.
pub struct Stage1Targets<T> {
    /// Observed source coordinates in pixels, `N×2×th×tw`.
    pub coords: Tensor<T>,
    /// Known mask of `coords`, `N×1×th×tw`.
    pub coords_known: Tensor<T>,
    /// Target image splatted into texture space, `N×3×th×tw`.
    pub color: Tensor<T>,
    /// Known mask of `color`, `N×1×th×tw`.
    pub color_known: Tensor<T>,
    /// `(width, height)` of the source image.
    pub extent: (usize, usize),
}

pub struct Stage1Loss {
    pub coord: Var,
    pub color: Var,
    pub total: Var,
}

/// Coordinate-stage objective for a predicted coordinate texture `d`
/// (`N×2×th×tw`, pixels) and the source image `source` (`N×3×H×W`).
///
/// The coordinate term compares `d` with the observed coordinates after
/// dividing x by W and y by H. The colour term samples `source` at `d` and
/// compares the result with the splatted target texture.
pub fn stage1_loss<T: Element>(
    g: &mut Graph<T>,
    d: Var,
    source: Var,
    targets: &Stage1Targets<T>,
    weights: Stage1Weights,
) -> Result<Stage1Loss> {
    let dshape = g.shape(d).to_vec();
    if targets.coords.shape() != dshape.as_slice() {
        return Err(Error::shape("stage1_loss coords", format!("{dshape:?}"), format!("{:?}", targets.coords.shape())));
    }
    let (n, _, th, tw) = g.value(d).dims4()?;
    if targets.color.shape() != [n, 3, th, tw] {
        return Err(Error::shape("stage1_loss color texture", format!("[{n}, 3, {th}, {tw}]"), format!("{:?}", targets.color.shape())));
    }
    let inv = [
        T::from_f64_lossy(1.0 / targets.extent.0 as f64),
        T::from_f64_lossy(1.0 / targets.extent.1 as f64),
    ];
    let zero = [T::zero(); 2];
    let dn = g.channel_affine(d, &inv, &zero)?;
    let c = g.constant(targets.coords.clone());
    let cn = g.channel_affine(c, &inv, &zero)?;
    let coord = masked_l1(g, dn, cn, &targets.coords_known)?;

    let t = g.grid_sample(source, d)?;
    let target_color = g.constant(targets.color.clone());
    let color = masked_l1(g, t, target_color, &targets.color_known)?;

    let a = g.scale(coord, T::from_f64_lossy(weights.coord));
    let b = g.scale(color, T::from_f64_lossy(weights.color));
    let total = g.add(a, b)?;
    Ok(Stage1Loss { coord, color, total })
}

impl Stage1Loss {
    pub fn report<T: Element>(&self, g: &Graph<T>) -> LossReport {
        let mut terms = IndexMap::new();
        terms.insert("stage1_coord_l1".into(), g.value(self.coord).item().as_f64());
        terms.insert("stage1_color_l1".into(), g.value(self.color).item().as_f64());
        LossReport {
            terms,
            total: g.value(self.total).item().as_f64(),
        }
    }
}

/// Mean over pixels of the smallest channel-averaged L1 distance between
/// `pred` and any `target` pixel in the `window×window` neighbourhood.
pub fn nn_loss<T: Element>(g: &mut Graph<T>, pred: Var, target: Var, window: usize) -> Result<Var> {
    g.nn_loss(pred, target, window)
}

/// Generator term of the non-saturating logistic GAN objective:
/// `mean softplus(−fake)`.
pub fn gan_generator_loss<T: Element>(g: &mut Graph<T>, fake_logits: Var) -> Var {
    let neg = g.scale(fake_logits, -T::one());
    let sp = g.softplus(neg);
    g.mean(sp)
}

/// Discriminator term: `mean softplus(−real) + mean softplus(fake)`.
pub fn gan_discriminator_loss<T: Element>(g: &mut Graph<T>, real_logits: Var, fake_logits: Var) -> Result<Var> {
    let neg = g.scale(real_logits, -T::one());
    let r = g.softplus(neg);
    let r = g.mean(r);
    let f = g.softplus(fake_logits);
    let f = g.mean(f);
    g.add(r, f)
}

/// `(generator term, discriminator term)` for one pair of logit maps.
pub fn gan_losses<T: Element>(g: &mut Graph<T>, real_logits: Var, fake_logits: Var) -> Result<(Var, Var)> {
    let gt = gan_generator_loss(g, fake_logits);
    let dt = gan_discriminator_loss(g, real_logits, fake_logits)?;
    Ok((gt, dt))
}

/// Weights of the image-stage objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Weights {
    pub nn: f64,
    pub feature: f64,
    pub style: f64,
    pub adversarial: f64,
    pub nn_window: usize,
}

impl Default for Stage2Weights {
    fn default() -> Self {
        Stage2Weights {
            nn: 1.0,
            feature: 1.0,
            style: 100.0,
            adversarial: 0.1,
            nn_window: 5,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_l1_hand_values() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::new([2], vec![1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::zeros([2]));
        let l = masked_l1(&mut g, a, b, &Tensor::ones([2])).unwrap();
        assert_eq!(g.value(l).item(), 1.5);
        let l = masked_l1(&mut g, a, b, &Tensor::zeros([2])).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let l = masked_l1(&mut g, a, a, &Tensor::ones([2])).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn zero_logits_give_log_two() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros([1, 1, 2, 2]));
        let (gt, dt) = gan_losses(&mut g, z, z).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((g.value(gt).item() - ln2).abs() < 1e-15);
        assert!((g.value(dt).item() - 2.0 * ln2).abs() < 1e-15);
    }

    #[test]
    fn confident_discriminator_has_vanishing_loss() {
        let mut g = Graph::<f64>::new();
        let real = g.constant(Tensor::full([1, 1, 2, 2], 60.0));
        let fake = g.constant(Tensor::full([1, 1, 2, 2], -60.0));
        let d = gan_discriminator_loss(&mut g, real, fake).unwrap();
        assert!(g.value(d).item() < 1e-25);
    }
}

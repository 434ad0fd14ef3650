use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Var};

use super::layers::{Activation, Conv};
use super::params::{Bound, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    /// Image channels plus conditioning channels.
    pub in_channels: usize,
    pub width: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            in_channels: 6,
            width: 16,
        }
    }
}

/// Conditional patch discriminator: three stride-2 stages and a logit head,
/// one score per `/8` cell.
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    stages: Vec<Conv>,
    head: Conv,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig) -> Result<Self> {
        if config.in_channels == 0 || config.width == 0 {
            return Err(Error::invalid("discriminator channels must be positive"));
        }
        let w = config.width;
        let stages = vec![
            Conv::new("d.0", config.in_channels, w, 4, 2, 1),
            Conv::new("d.1", w, 2 * w, 4, 2, 1),
            Conv::new("d.2", 2 * w, 4 * w, 4, 2, 1),
        ];
        let head = Conv::new("d.head", 4 * w, 1, 3, 1, 1);
        Ok(Discriminator { config, stages, head })
    }

    pub fn init_params<T: Element>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for s in &self.stages {
            s.register(&mut store, &mut rng, 1.0)?;
        }
        self.head.register(&mut store, &mut rng, 1.0)?;
        Ok(store)
    }

    /// Patch logits `N×1×H/8×W/8` for `image` conditioned on `cond`.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, image: Var, cond: Var) -> Result<Var> {
        let (n, _, h, w) = g.value(image).dims4()?;
        let (cn, _, ch, cw) = g.value(cond).dims4()?;
        if (n, h, w) != (cn, ch, cw) {
            return Err(Error::shape("discriminator conditioning", format!("{n}x?x{h}x{w}"), format!("{cn}x?x{ch}x{cw}")));
        }
        let mut x = g.concat_channels(&[image, cond])?;
        for s in &self.stages {
            x = s.forward(g, p, x)?;
            x = Activation::LeakyRelu.apply(g, x);
        }
        self.head.forward(g, p, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn sixty_four_pixels_give_eight_by_eight() {
        let d = Discriminator::new(DiscriminatorConfig { in_channels: 4, width: 2 }).unwrap();
        let params = d.init_params::<f32>(1).unwrap();
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let img = g.constant(Tensor::zeros([1, 3, 64, 64]));
        let cond = g.constant(Tensor::zeros([1, 1, 64, 64]));
        let out = d.forward(&mut g, &p, img, cond).unwrap();
        assert_eq!(g.shape(out), &[1, 1, 8, 8]);
    }

    #[test]
    fn zero_weights_give_bias_logits() {
        let d = Discriminator::new(DiscriminatorConfig { in_channels: 4, width: 2 }).unwrap();
        let mut params = d.init_params::<f32>(1).unwrap();
        let names: Vec<String> = params.names().map(String::from).collect();
        for n in names {
            params.get_mut(&n).unwrap().data_mut().fill(0.0);
        }
        params.get_mut("d.head.bias").unwrap().data_mut()[0] = 0.75;
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let img = g.constant(Tensor::from_fn([2, 3, 16, 16], |i| i as f32 * 0.01));
        let cond = g.constant(Tensor::ones([2, 1, 16, 16]));
        let out = d.forward(&mut g, &p, img, cond).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.75));
    }
}

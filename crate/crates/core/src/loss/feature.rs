use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{Activation, Conv, ParamStore};
use crate::tensor::{Element, Graph, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureExtractorConfig {
    pub seed: u64,
    /// Channels at each of the three taps.
    pub widths: [usize; 3],
}

impl Default for FeatureExtractorConfig {
    fn default() -> Self {
        FeatureExtractorConfig {
            seed: 0x5eed,
            widths: [8, 16, 32],
        }
    }
}

/// Frozen random conv stack with taps at full, /2 and /4 resolution.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub config: FeatureExtractorConfig,
    convs: Vec<Conv>,
    weights: ParamStore<f64>,
}

impl FeatureExtractor {
    pub fn new(config: FeatureExtractorConfig) -> Result<Self> {
        let [a, b, c] = config.widths;
        let convs = vec![
            Conv::new("fx.0", 3, a, 3, 1, 1),
            Conv::new("fx.1", a, b, 3, 1, 1),
            Conv::new("fx.2", b, c, 3, 1, 1),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut weights = ParamStore::new();
        for conv in &convs {
            conv.register(&mut weights, &mut rng, 1.0)?;
        }
        Ok(FeatureExtractor { config, convs, weights })
    }

    pub fn weights(&self) -> &ParamStore<f64> {
        &self.weights
    }

    /// Tapped activations of an `N×3×H×W` image (H, W divisible by 4).
    pub fn features<T: Element>(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>> {
        let p = self.weights.cast::<T>().bind(g, false);
        let mut taps = Vec::with_capacity(self.convs.len());
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            if i > 0 {
                h = g.downsample2(h)?;
            }
            h = conv.forward(g, &p, h)?;
            h = Activation::LeakyRelu.apply(g, h);
            taps.push(h);
        }
        Ok(taps)
    }

    /// Sum over taps of the mean absolute feature difference.
    pub fn feature_loss<T: Element>(&self, g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
        let fp = self.features(g, pred)?;
        let ft = self.features(g, target)?;
        self.sum_l1(g, &fp, &ft, false)
    }

    /// Sum over taps of the mean absolute difference of Gram matrices.
    pub fn style_loss<T: Element>(&self, g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
        let fp = self.features(g, pred)?;
        let ft = self.features(g, target)?;
        self.sum_l1(g, &fp, &ft, true)
    }

    /// Both losses sharing one feature pass: `(feature, style)`.
    pub fn perceptual<T: Element>(&self, g: &mut Graph<T>, pred: Var, target: Var) -> Result<(Var, Var)> {
        let fp = self.features(g, pred)?;
        let ft = self.features(g, target)?;
        Ok((self.sum_l1(g, &fp, &ft, false)?, self.sum_l1(g, &fp, &ft, true)?))
    }

    fn sum_l1<T: Element>(&self, g: &mut Graph<T>, fp: &[Var], ft: &[Var], gram: bool) -> Result<Var> {
        let mut total: Option<Var> = None;
        for (&a, &b) in fp.iter().zip(ft) {
            let (a, b) = if gram { (g.gram(a)?, g.gram(b)?) } else { (a, b) };
            let d = g.sub(a, b)?;
            let d = g.abs(d);
            let m = g.mean(d);
            total = Some(match total {
                Some(t) => g.add(t, m)?,
                None => m,
            });
        }
        Ok(total.expect("at least one tap"))
    }
}

//! Texture-space hourglass `f` that completes coordinate (or colour) textures.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Var};
use crate::warp::CoordMap;

use super::layers::{Activation, Conv, GatedConv, GatedConvSpec};
use super::params::{Bound, ParamStore};

/// What the inpainter predicts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InpainterOutput {
    /// Source-image pixel coordinates (2 channels) from the encoded
    /// coordinate texture (3 channels).
    #[default]
    Coordinates,
    /// RGB in `[0, 1]` from a masked colour texture plus its mask (4 channels).
    Colors,
}

impl InpainterOutput {
    pub fn in_channels(self) -> usize {
        match self {
            InpainterOutput::Coordinates => 3,
            InpainterOutput::Colors => 4,
        }
    }

    pub fn out_channels(self) -> usize {
        match self {
            InpainterOutput::Coordinates => 2,
            InpainterOutput::Colors => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InpainterConfig {
    /// Channel width per level; the number of entries is the number of
    /// downsamplings. Levels past the end reuse the last width.
    pub widths: Vec<usize>,
    pub convs_per_level: usize,
    pub bottleneck_convs: usize,
    pub kernel: usize,
    pub activation: Activation,
    pub output: InpainterOutput,
}

impl Default for InpainterConfig {
    fn default() -> Self {
        InpainterConfig {
            widths: vec![32, 64, 128],
            convs_per_level: 1,
            bottleneck_convs: 2,
            kernel: 3,
            activation: Activation::LeakyRelu,
            output: InpainterOutput::Coordinates,
        }
    }
}

impl InpainterConfig {
    /// Two convolutions per level and no separate bottleneck: 14 conv layers
    /// with the default three levels.
    pub fn fourteen_layer() -> Self {
        InpainterConfig {
            convs_per_level: 2,
            bottleneck_convs: 0,
            ..Self::default()
        }
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    fn width(&self, level: usize) -> usize {
        self.widths[level.min(self.widths.len() - 1)]
    }

    /// Number of convolution layers, output head included.
    pub fn conv_layers(&self) -> usize {
        2 + 2 * self.depth() * self.convs_per_level + self.bottleneck_convs
    }

    fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::invalid("inpainter widths must be non-empty and positive"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::invalid("inpainter kernel must be odd"));
        }
        Ok(())
    }
}

/// Layer schedule of the hourglass.
#[derive(Clone, Debug)]
pub struct Inpainter {
    pub config: InpainterConfig,
    stem: GatedConv,
    down: Vec<Vec<GatedConv>>,
    bottleneck: Vec<GatedConv>,
    up: Vec<Vec<GatedConv>>,
    head: Conv,
}

impl Inpainter {
    pub fn new(config: InpainterConfig) -> Result<Self> {
        config.validate()?;
        let (k, act) = (config.kernel, config.activation);
        let gc = |name: String, i, o| GatedConv::new(name, GatedConvSpec::same(i, o, k, act));
        let stem = gc("f.stem".into(), config.output.in_channels(), config.width(0));
        let depth = config.depth();
        let level_convs = |prefix: &str, level: usize, from: usize, to: usize| -> Vec<GatedConv> {
            (0..config.convs_per_level)
                .map(|j| gc(format!("f.{prefix}{level}.{j}"), if j == 0 { from } else { to }, to))
                .collect()
        };
        let down = (1..=depth)
            .map(|l| level_convs("down", l, config.width(l - 1), config.width(l)))
            .collect();
        let wb = config.width(depth);
        let bottleneck = (0..config.bottleneck_convs)
            .map(|j| gc(format!("f.mid.{j}"), wb, wb))
            .collect();
        let up = (0..depth)
            .rev()
            .map(|l| level_convs("up", l, config.width(l + 1), config.width(l)))
            .collect();
        let head = Conv::new("f.head", config.width(0), config.output.out_channels(), k, 1, k / 2);
        Ok(Inpainter {
            config,
            stem,
            down,
            bottleneck,
            up,
            head,
        })
    }

    fn gated(&self) -> impl Iterator<Item = &GatedConv> {
        std::iter::once(&self.stem)
            .chain(self.down.iter().flatten())
            .chain(&self.bottleneck)
            .chain(self.up.iter().flatten())
    }

    /// Fresh He-initialised parameters.
    pub fn init_params<T: Element>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for layer in self.gated() {
            layer.register(&mut store, &mut rng)?;
        }
        self.head.register(&mut store, &mut rng, 0.1)?;
        Ok(store)
    }

    /// Runs the hourglass on an encoded `N×C×texH×texW` input. `extent` is the
    /// `(width, height)` of the source image, used to scale coordinate output
    /// into `[−0.1·W, 1.1·W] × [−0.1·H, 1.1·H]`.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var, extent: (usize, usize)) -> Result<Var> {
        let (_, c, h, w) = g.value(x).dims4()?;
        if c != self.config.output.in_channels() {
            return Err(Error::shape("inpainter input channels", self.config.output.in_channels(), c));
        }
        let m = 1usize << self.config.depth();
        if h % m != 0 || w % m != 0 {
            return Err(Error::invalid(format!(
                "texture extents {w}x{h} incompatible with downsampling depth {} (need multiples of {m})",
                self.config.depth()
            )));
        }
        let mut h = self.stem.forward(g, p, x)?;
        for level in &self.down {
            h = g.downsample2(h)?;
            for layer in level {
                h = layer.forward(g, p, h)?;
            }
        }
        for layer in &self.bottleneck {
            h = layer.forward(g, p, h)?;
        }
        for level in &self.up {
            h = g.upsample2(h)?;
            for layer in level {
                h = layer.forward(g, p, h)?;
            }
        }
        let z = self.head.forward(g, p, h)?;
        match self.config.output {
            InpainterOutput::Colors => Ok(g.sigmoid(z)),
            InpainterOutput::Coordinates => {
                let t = g.tanh(z);
                let (iw, ih) = (extent.0 as f64, extent.1 as f64);
                let scale = [T::from_f64_lossy(0.6 * iw), T::from_f64_lossy(0.6 * ih)];
                let shift = [T::from_f64_lossy(0.5 * iw), T::from_f64_lossy(0.5 * ih)];
                g.channel_affine(t, &scale, &shift)
            }
        }
    }

    /// Inference: completes `c` into a coordinate map known everywhere.
    pub fn inpaint_coords(&self, params: &ParamStore<f32>, c: &CoordMap, extent: (usize, usize)) -> Result<CoordMap> {
        if self.config.output != InpainterOutput::Coordinates {
            return Err(Error::invalid("inpaint_coords on a colour inpainter"));
        }
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let x = g.constant(c.network_input(extent));
        let d = self.forward(&mut g, &p, x, extent)?;
        CoordMap::from_tensor(g.value(d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::CoordMap;

    fn tiny() -> InpainterConfig {
        InpainterConfig {
            widths: vec![4, 6],
            ..InpainterConfig::default()
        }
    }

    #[test]
    fn layer_counts() {
        assert_eq!(InpainterConfig::default().conv_layers(), 10);
        assert_eq!(InpainterConfig::fourteen_layer().conv_layers(), 14);
        let net = Inpainter::new(InpainterConfig::fourteen_layer()).unwrap();
        assert_eq!(net.gated().count() + 1, 14);
    }

    #[test]
    fn untrained_output_is_complete_and_finite() {
        let net = Inpainter::new(tiny()).unwrap();
        let params = net.init_params::<f32>(3).unwrap();
        let mut c = CoordMap::unknown(8, 12);
        c.set(2, 3, 5.0, 7.0);
        let d = net.inpaint_coords(&params, &c, (16, 16)).unwrap();
        assert!(d.is_complete());
        assert_eq!((d.width(), d.height()), (8, 12));
        for (&x, &y) in d.xs().iter().zip(d.ys()) {
            assert!(x.is_finite() && y.is_finite());
            assert!((-1.6..=17.6).contains(&x) && (-1.6..=17.6).contains(&y));
        }
    }

    #[test]
    fn incompatible_extent_errors() {
        let net = Inpainter::new(tiny()).unwrap();
        let params = net.init_params::<f32>(3).unwrap();
        let c = CoordMap::unknown(6, 8);
        assert!(net.inpaint_coords(&params, &c, (16, 16)).is_err());
    }
}

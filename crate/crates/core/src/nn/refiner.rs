//! Image-space refiner `g` with two encoders and deformable skips.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};
use crate::warp::{downsample_warpfield, CoordMap};

use super::layers::{Activation, Conv, GatedConv, GatedConvSpec};
use super::params::{Bound, ParamStore};

/// Number of downsamplings (and of skip resolutions) in the refiner.
pub const REFINER_LEVELS: usize = 3;

/// Channels of the optional identity conditioning: masked RGB plus mask.
pub const IDENTITY_CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinerMode {
    /// One encoder over the concatenated target and source stacks.
    Plain,
    /// Two encoders; source activations are resampled by the warp field
    /// before every skip and at the bottleneck.
    #[default]
    Deformable,
    /// Two encoders with the source activations passed through unwarped.
    DualUnwarped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerConfig {
    pub mode: RefinerMode,
    /// Channels of the target-aligned stack, identity conditioning excluded.
    pub target_channels: usize,
    pub source_channels: usize,
    pub identity_cond: bool,
    /// Encoder widths at full, /2, /4 and /8 resolution.
    pub widths: [usize; 4],
    pub res_blocks: usize,
    pub kernel: usize,
    pub activation: Activation,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        RefinerConfig {
            mode: RefinerMode::Deformable,
            target_channels: 10,
            source_channels: 8,
            identity_cond: false,
            widths: [16, 32, 64, 64],
            res_blocks: 4,
            kernel: 3,
            activation: Activation::LeakyRelu,
        }
    }
}

/// Warp fields at full, /2, /4 and /8 resolution, each `N×2×h×w` in the
/// pixel units of its own level.
#[derive(Clone, Debug)]
pub struct WarpPyramid<T> {
    levels: Vec<Tensor<T>>,
}

impl<T: Element> WarpPyramid<T> {
    /// Builds the pyramid from one target-frame warp field per batch item.
    /// Unknown entries resample in place.
    pub fn from_fields(fields: &[CoordMap]) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::invalid("warp pyramid of zero fields"));
        }
        let mut levels = Vec::with_capacity(REFINER_LEVELS + 1);
        for l in 0..=REFINER_LEVELS {
            let items = fields
                .iter()
                .map(|f| {
                    if l == 0 {
                        Ok(f.to_tensor_identity_filled())
                    } else {
                        downsample_warpfield(f, 1 << l).map(|d| d.to_tensor_identity_filled())
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            levels.push(Tensor::cat_batch(&items)?);
        }
        Ok(WarpPyramid { levels })
    }

    pub fn identity(batch: usize, width: usize, height: usize) -> Result<Self> {
        Self::from_fields(&vec![CoordMap::identity(width, height); batch])
    }

    pub fn level(&self, l: usize) -> &Tensor<T> {
        &self.levels[l]
    }
}

/// Inputs of one refiner pass. All image-like vars are `N×C×H×W`.
pub struct RefinerInput<'a, T> {
    pub target: Var,
    pub source: Var,
    pub identity_cond: Option<Var>,
    pub warp: Option<&'a WarpPyramid<T>>,
}

struct Encoder {
    convs: Vec<GatedConv>,
}

impl Encoder {
    fn new(prefix: &str, in_channels: usize, cfg: &RefinerConfig) -> Self {
        let mut prev = in_channels;
        let convs = cfg
            .widths
            .iter()
            .enumerate()
            .map(|(l, &w)| {
                let c = GatedConv::new(
                    format!("{prefix}.{l}"),
                    GatedConvSpec::same(prev, w, cfg.kernel, cfg.activation),
                );
                prev = w;
                c
            })
            .collect();
        Encoder { convs }
    }

    /// Activations at full, /2, /4 and /8 resolution.
    fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.convs.len());
        let mut h = x;
        for (l, conv) in self.convs.iter().enumerate() {
            if l > 0 {
                h = g.downsample2(h)?;
            }
            h = conv.forward(g, p, h)?;
            out.push(h);
        }
        Ok(out)
    }
}

pub struct Refiner {
    pub config: RefinerConfig,
    target_enc: Encoder,
    source_enc: Option<Encoder>,
    fuse: Option<GatedConv>,
    res: Vec<(GatedConv, GatedConv)>,
    dec: Vec<GatedConv>,
    head: Conv,
}

impl Refiner {
    pub fn new(config: RefinerConfig) -> Result<Self> {
        if config.widths.contains(&0) || config.kernel.is_multiple_of(2) {
            return Err(Error::invalid("refiner widths must be positive and kernel odd"));
        }
        let [w0, w1, w2, w3] = config.widths;
        let (k, act) = (config.kernel, config.activation);
        let gc = |name: String, i, o| GatedConv::new(name, GatedConvSpec::same(i, o, k, act));
        let tc = config.target_channels + if config.identity_cond { IDENTITY_CHANNELS } else { 0 };
        let dual = config.mode != RefinerMode::Plain;
        let (target_enc, source_enc, fuse) = if dual {
            (
                Encoder::new("g.enc_t", tc, &config),
                Some(Encoder::new("g.enc_s", config.source_channels, &config)),
                Some(gc("g.fuse".into(), 2 * w3, w3)),
            )
        } else {
            (Encoder::new("g.enc", tc + config.source_channels, &config), None, None)
        };
        let res = (0..config.res_blocks)
            .map(|i| (gc(format!("g.res{i}.a"), w3, w3), gc(format!("g.res{i}.b"), w3, w3)))
            .collect();
        let skips = if dual { 2 } else { 1 };
        let widths = [w0, w1, w2, w3];
        let dec = (0..REFINER_LEVELS)
            .rev()
            .map(|l| gc(format!("g.dec{l}"), widths[l + 1] + skips * widths[l], widths[l]))
            .collect();
        let head = Conv::new("g.head", w0, 3, k, 1, k / 2);
        Ok(Refiner {
            config,
            target_enc,
            source_enc,
            fuse,
            res,
            dec,
            head,
        })
    }

    pub fn init_params<T: Element>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoders = std::iter::once(&self.target_enc).chain(self.source_enc.as_ref());
        for conv in encoders.flat_map(|e| &e.convs) {
            conv.register(&mut store, &mut rng)?;
        }
        if let Some(f) = &self.fuse {
            f.register(&mut store, &mut rng)?;
        }
        for (a, b) in &self.res {
            a.register(&mut store, &mut rng)?;
            b.register(&mut store, &mut rng)?;
        }
        for d in &self.dec {
            d.register(&mut store, &mut rng)?;
        }
        self.head.register(&mut store, &mut rng, 1.0)?;
        Ok(store)
    }

    fn check_channels<T: Element>(g: &Graph<T>, v: Var, want: usize, what: &str) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = g.value(v).dims4()?;
        if c != want {
            return Err(Error::shape("refiner stack channels", format!("{want} for {what}"), c));
        }
        Ok((n, h, w))
    }

    /// Predicted image `N×3×H×W` in `(0, 1)`.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, input: &RefinerInput<'_, T>) -> Result<Var> {
        let cfg = &self.config;
        let dims = Self::check_channels(g, input.target, cfg.target_channels, "target stack")?;
        if Self::check_channels(g, input.source, cfg.source_channels, "source stack")? != dims {
            return Err(Error::invalid("refiner target and source stacks differ in size"));
        }
        let (_, h, w) = dims;
        let m = 1 << REFINER_LEVELS;
        if h % m != 0 || w % m != 0 {
            return Err(Error::invalid(format!("refiner input {w}x{h} must be a multiple of {m}")));
        }
        let target = match (cfg.identity_cond, input.identity_cond) {
            (true, Some(id)) => {
                if Self::check_channels(g, id, IDENTITY_CHANNELS, "identity conditioning")? != dims {
                    return Err(Error::invalid("identity conditioning differs in size"));
                }
                g.concat_channels(&[input.target, id])?
            }
            (true, None) => {
                return Err(Error::invalid("refiner expects identity conditioning (masked image and mask)"))
            }
            (false, Some(_)) => return Err(Error::invalid("refiner was not configured for identity conditioning")),
            (false, None) => input.target,
        };

        let (mut h, skips) = match cfg.mode {
            RefinerMode::Plain => {
                let x = g.concat_channels(&[target, input.source])?;
                let mut acts = self.target_enc.forward(g, p, x)?;
                let b = acts.pop().expect("bottleneck");
                (b, acts.into_iter().map(|a| vec![a]).collect::<Vec<_>>())
            }
            RefinerMode::Deformable | RefinerMode::DualUnwarped => {
                let mut t = self.target_enc.forward(g, p, target)?;
                let mut s = self.source_enc.as_ref().expect("dual encoder").forward(g, p, input.source)?;
                if cfg.mode == RefinerMode::Deformable {
                    let warp = input
                        .warp
                        .ok_or_else(|| Error::invalid("deformable refiner requires the warp field E"))?;
                    for (l, act) in s.iter_mut().enumerate() {
                        let field = warp.level(l);
                        let (_, _, fh, fw) = field.dims4()?;
                        let (_, _, ah, aw) = g.value(*act).dims4()?;
                        if (fh, fw) != (ah, aw) {
                            return Err(Error::shape("warp level", format!("{ah}x{aw} at level {l}"), format!("{fh}x{fw}")));
                        }
                        let e = g.constant(field.clone());
                        *act = g.grid_sample(*act, e)?;
                    }
                }
                let tb = t.pop().expect("bottleneck");
                let sb = s.pop().expect("bottleneck");
                let fused = g.concat_channels(&[tb, sb])?;
                let b = self.fuse.as_ref().expect("fuse layer").forward(g, p, fused)?;
                (b, t.into_iter().zip(s).map(|(a, b)| vec![a, b]).collect())
            }
        };

        for (a, b) in &self.res {
            let r = a.forward(g, p, h)?;
            let r = b.forward(g, p, r)?;
            h = g.add(h, r)?;
        }
        for (conv, l) in self.dec.iter().zip((0..REFINER_LEVELS).rev()) {
            h = g.upsample2(h)?;
            let mut parts = vec![h];
            parts.extend_from_slice(&skips[l]);
            h = g.concat_channels(&parts)?;
            h = conv.forward(g, p, h)?;
        }
        let z = self.head.forward(g, p, h)?;
        Ok(g.sigmoid(z))
    }
}

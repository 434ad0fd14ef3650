//! Turning view pairs into network inputs.

use crate::data::dataset::{dataset_index, Split};
use crate::data::synth::{generate_pair, identity_mask, SceneConfig};
use crate::data::PairRecord;
use crate::error::{Error, Result};
use crate::nn::{Inpainter, InpainterOutput, ParamStore, WarpPyramid};
use crate::tensor::{Graph, Tensor};
use crate::warp::{
    meshgrid, splat_colors, splat_coordinates, texture_from_coords, warp_texture, warp_to_target, ColorTexture,
    CoordMap, Image, UvMap,
};

use super::config::{Ablation, PipelineConfig};

/// Source and target views of one subject, with the surface texture when
/// it is known.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub source: Image,
    pub source_uv: UvMap,
    pub target: Image,
    pub target_uv: UvMap,
    pub texture: Option<ColorTexture>,
}

/// Where training or evaluation pairs come from.
#[derive(Clone, Debug)]
pub enum PairSource {
    Synthetic { scene: SceneConfig, seeds: Vec<u64> },
    Disk { records: Vec<PairRecord>, extent: (usize, usize) },
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Scene seed of generated pair `index`.
pub fn scene_seed(data_seed: u64, split: Split, index: usize) -> u64 {
    let base = data_seed.wrapping_mul(GOLDEN) ^ (index as u64);
    match split {
        Split::Train => base & !(1 << 63),
        Split::Test => base | (1 << 63),
    }
}

impl PairSource {
    pub fn for_split(cfg: &PipelineConfig, split: Split) -> Result<Self> {
        match &cfg.dataset {
            Some(dir) => {
                let records: Vec<PairRecord> = dataset_index(dir)?.into_iter().filter(|r| r.split == split).collect();
                Ok(PairSource::Disk { records, extent: cfg.image_extent() })
            }
            None => {
                let n = match split {
                    Split::Train => cfg.train_pairs,
                    Split::Test => cfg.test_pairs,
                };
                Ok(PairSource::Synthetic {
                    scene: cfg.scene.clone(),
                    seeds: (0..n).map(|i| scene_seed(cfg.data_seed, split, i)).collect(),
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            PairSource::Synthetic { seeds, .. } => seeds.len(),
            PairSource::Disk { records, .. } => records.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Short identifier of pair `i` for reports.
    pub fn label(&self, i: usize) -> String {
        match self {
            PairSource::Synthetic { seeds, .. } => format!("scene{:016x}", seeds[i]),
            PairSource::Disk { records, .. } => {
                let r = &records[i];
                format!("{}:{}->{}", r.id, r.source.pose, r.target.pose)
            }
        }
    }

    pub fn get(&self, i: usize) -> Result<Pair> {
        match self {
            PairSource::Synthetic { scene, seeds } => {
                let p = generate_pair(seeds[i], scene)?;
                Ok(Pair {
                    source: p.source,
                    source_uv: p.source_uv,
                    target: p.target,
                    target_uv: p.target_uv,
                    texture: Some(p.texture),
                })
            }
            PairSource::Disk { records, extent } => {
                let p = records[i].load()?;
                check_extent("source image", (p.source.width(), p.source.height()), *extent)?;
                check_extent("source uv", (p.source_uv.width(), p.source_uv.height()), *extent)?;
                check_extent("target image", (p.target.width(), p.target.height()), *extent)?;
                check_extent("target uv", (p.target_uv.width(), p.target_uv.height()), *extent)?;
                Ok(Pair {
                    source: p.source,
                    source_uv: p.source_uv,
                    target: p.target,
                    target_uv: p.target_uv,
                    texture: None,
                })
            }
        }
    }
}

pub(crate) fn check_extent(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::invalid(format!(
            "resolution mismatch: {what} is {}x{}, configuration expects {}x{}",
            got.0, got.1, want.0, want.1
        )));
    }
    Ok(())
}

pub(crate) fn bool_tensor(mask: &[bool], width: usize, height: usize) -> Tensor<f32> {
    Tensor::from_fn([1, 1, height, width], |i| if mask[i] { 1.0 } else { 0.0 })
}

/// Everything the inpainter stage needs for one pair.
#[derive(Clone, Debug)]
pub struct Stage1Inputs {
    /// Splatted source coordinates.
    pub coords: CoordMap,
    /// Network input, `1×C×th×tw`.
    pub net_input: Tensor<f32>,
    /// Splatted source colours and their known mask.
    pub source_tex: Tensor<f32>,
    pub source_known: Tensor<f32>,
    /// Splatted target colours and their known mask.
    pub target_tex: Tensor<f32>,
    pub target_known: Tensor<f32>,
    /// Source image, `1×3×H×W`.
    pub source: Tensor<f32>,
}

fn color_input(tex: &ColorTexture, known: &[bool]) -> Result<Tensor<f32>> {
    let (w, h) = (tex.width(), tex.height());
    let n = w * h;
    let mut data = Vec::with_capacity(4 * n);
    for c in 0..3 {
        data.extend((0..n).map(|k| if known[k] { tex.planar()[c * n + k] } else { 0.0 }));
    }
    data.extend(known.iter().map(|&k| if k { 1.0 } else { 0.0 }));
    Tensor::new([1, 4, h, w], data)
}

pub fn stage1_inputs(
    ablation: Ablation,
    source: &Image,
    source_uv: &UvMap,
    target: Option<(&Image, &UvMap)>,
    texture_extent: (usize, usize),
) -> Result<Stage1Inputs> {
    let (tw, th) = texture_extent;
    let extent = (source.width(), source.height());
    let coords = splat_coordinates(source_uv, tw, th)?;
    let (stex, sknown) = splat_colors(source, source_uv, tw, th)?;
    let net_input = if ablation.uses_coordinates() {
        coords.network_input(extent)
    } else {
        color_input(&stex, &sknown)?
    };
    let (target_tex, target_known) = match target {
        Some((img, uv)) => {
            let (t, k) = splat_colors(img, uv, tw, th)?;
            (t.to_tensor(), bool_tensor(&k, tw, th))
        }
        None => (Tensor::zeros([1, 3, th, tw]), Tensor::zeros([1, 1, th, tw])),
    };
    Ok(Stage1Inputs {
        coords,
        net_input,
        source_tex: stex.to_tensor(),
        source_known: bool_tensor(&sknown, tw, th),
        target_tex,
        target_known,
        source: source.to_tensor(),
    })
}

/// Stage-1 output for one pair.
#[derive(Clone, Debug)]
pub struct Completed {
    pub texture: ColorTexture,
    /// Completed coordinate texture D; absent for colour inpainting.
    pub coords: Option<CoordMap>,
}

/// Runs the frozen inpainter on a batch. Texels already known from the
/// source view keep their splatted values.
pub fn complete_textures(
    net: &Inpainter,
    params: &ParamStore<f32>,
    inputs: &[&Stage1Inputs],
    sources: &[&Image],
) -> Result<Vec<Completed>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let extent = (sources[0].width(), sources[0].height());
    let x = Tensor::cat_batch(&inputs.iter().map(|s| s.net_input.clone()).collect::<Vec<_>>())?;
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let xv = g.constant(x);
    let y = net.forward(&mut g, &p, xv, extent)?;
    let out = g.value(y);
    let mut completed = Vec::with_capacity(inputs.len());
    for (i, (src, inp)) in sources.iter().zip(inputs).enumerate() {
        let item = out.batch_item(i)?;
        completed.push(if net.config.output == InpainterOutput::Coordinates {
            let mut d = CoordMap::from_tensor(&item)?;
            for j in 0..d.height() {
                for k in 0..d.width() {
                    if let Some((x, y)) = inp.coords.get(k, j) {
                        d.set(k, j, x, y);
                    }
                }
            }
            Completed {
                texture: texture_from_coords(src, &d)?,
                coords: Some(d),
            }
        } else {
            let (_, _, h, w) = item.dims4()?;
            let keep = inp.source_known.data();
            let n = keep.len();
            let mut data = item.into_data();
            for (k, v) in data.iter_mut().enumerate() {
                if keep[k % n] > 0.5 {
                    *v = inp.source_tex.data()[k];
                }
            }
            Completed {
                texture: ColorTexture::from_planar(w, h, data)?,
                coords: None,
            }
        });
    }
    Ok(completed)
}

/// Refiner inputs for one pair.
#[derive(Clone, Debug)]
pub struct Stage2Inputs {
    pub target_stack: Tensor<f32>,
    pub source_stack: Tensor<f32>,
    pub identity: Option<Tensor<f32>>,
    /// Warp field E in the target frame (coordinate modes only).
    pub warp: Option<CoordMap>,
    /// Warped texture W.
    pub warped: Image,
    /// Target UV stack, the discriminator's conditioning.
    pub cond: Tensor<f32>,
}

/// E as two channels `(x/(W−1), y/(H−1))`, zero where unknown.
fn normalised_field(e: &CoordMap, extent: (usize, usize)) -> Tensor<f32> {
    let n = e.width() * e.height();
    let sx = 1.0 / (extent.0.max(2) - 1) as f32;
    let sy = 1.0 / (extent.1.max(2) - 1) as f32;
    Tensor::from_fn([1, 2, e.height(), e.width()], |k| {
        let p = k % n;
        if !e.known()[p] {
            0.0
        } else if k < n {
            e.xs()[p] * sx
        } else {
            e.ys()[p] * sy
        }
    })
}

/// Masked identity image and its mask, `1×4×H×W`.
pub fn identity_tensor(image: &Image, mask: &[bool]) -> Result<Tensor<f32>> {
    let (w, h) = (image.width(), image.height());
    if mask.len() != w * h {
        return Err(Error::shape("identity mask", w * h, mask.len()));
    }
    let masked = image.masked(mask);
    let mut data = masked.planar().to_vec();
    data.extend(mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
    Tensor::new([1, 4, h, w], data)
}

/// A garment view with its identity band removed: those pixels are zeroed
/// and dropped from the UV map, so the refiner can only take the identity
/// from its conditioning input.
pub fn garment_view(image: &Image, uv: &UvMap, band: f64) -> (Image, UvMap) {
    let band_mask = identity_mask(uv, band);
    let keep: Vec<bool> = band_mask.iter().map(|&b| !b).collect();
    let mut uv = uv.clone();
    for y in 0..uv.height() {
        for x in 0..uv.width() {
            if band_mask[y * uv.width() + x] {
                uv.clear(x, y);
            }
        }
    }
    (image.masked(&keep), uv)
}

/// Identity conditioning from a person view: pixels in the identity band.
pub fn identity_from_view(image: &Image, uv: &UvMap, band: f64) -> Result<Tensor<f32>> {
    identity_tensor(image, &identity_mask(uv, band))
}

pub fn stage2_inputs(
    ablation: Ablation,
    source: &Image,
    source_uv: &UvMap,
    target_uv: &UvMap,
    completed: &Completed,
    identity: Option<Tensor<f32>>,
) -> Result<Stage2Inputs> {
    let extent = (target_uv.width(), target_uv.height());
    let mesh = meshgrid::<f32>(extent.0, extent.1);
    let uv_n = target_uv.to_tensor::<f32>();
    let (warped, warp) = match (&completed.coords, ablation.uses_coordinates()) {
        (Some(d), true) => {
            let maps = warp_to_target(&completed.texture, d, target_uv)?;
            (maps.color, Some(maps.coords))
        }
        (None, false) => (warp_texture(&completed.texture, target_uv), None),
        _ => return Err(Error::invalid("stage-1 output does not match the ablation mode")),
    };
    let w_t = warped.to_tensor::<f32>();
    let parts: Vec<Tensor<f32>> = match ablation {
        Ablation::Full | Ablation::NoDeform => {
            let e = warp.as_ref().expect("coordinate mode has E");
            vec![w_t, normalised_field(e, extent), uv_n.clone(), mesh.clone()]
        }
        Ablation::RgbInpainting => vec![w_t, uv_n.clone(), mesh.clone()],
        Ablation::NoTextures => vec![uv_n.clone(), mesh.clone()],
    };
    let target_stack = concat_channels(&parts)?;
    let source_stack = concat_channels(&[source.to_tensor(), source_uv.to_tensor(), mesh])?;
    let warp = if ablation == Ablation::Full { warp } else { None };
    Ok(Stage2Inputs {
        target_stack,
        source_stack,
        identity,
        warp,
        warped,
        cond: uv_n,
    })
}

/// Channel concatenation of `1×C×H×W` tensors.
pub(crate) fn concat_channels(parts: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let (_, _, h, w) = parts[0].dims4()?;
    let mut data = Vec::new();
    let mut c = 0;
    for p in parts {
        let (n, pc, ph, pw) = p.dims4()?;
        if (n, ph, pw) != (1, h, w) {
            return Err(Error::shape("concat_channels", format!("1x?x{h}x{w}"), format!("{:?}", p.shape())));
        }
        c += pc;
        data.extend_from_slice(p.data());
    }
    Tensor::new([1, c, h, w], data)
}

/// Batched refiner inputs.
pub struct Stage2Batch {
    pub target_stack: Tensor<f32>,
    pub source_stack: Tensor<f32>,
    pub identity: Option<Tensor<f32>>,
    pub warp: Option<WarpPyramid<f32>>,
    pub cond: Tensor<f32>,
}

impl Stage2Batch {
    pub fn new(items: &[&Stage2Inputs]) -> Result<Self> {
        let cat = |f: &dyn Fn(&Stage2Inputs) -> Tensor<f32>| -> Result<Tensor<f32>> {
            Tensor::cat_batch(&items.iter().map(|s| f(s)).collect::<Vec<_>>())
        };
        let identity = if items.iter().all(|s| s.identity.is_some()) {
            Some(cat(&|s| s.identity.clone().expect("checked"))?)
        } else {
            None
        };
        let warp = if items.iter().all(|s| s.warp.is_some()) {
            let fields: Vec<CoordMap> = items.iter().map(|s| s.warp.clone().expect("checked")).collect();
            Some(WarpPyramid::from_fields(&fields)?)
        } else {
            None
        };
        Ok(Stage2Batch {
            target_stack: cat(&|s| s.target_stack.clone())?,
            source_stack: cat(&|s| s.source_stack.clone())?,
            identity,
            warp,
            cond: cat(&|s| s.cond.clone())?,
        })
    }
}

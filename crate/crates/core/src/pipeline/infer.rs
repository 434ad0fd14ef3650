use std::path::Path;

use crate::data::checkpoint::{load_checkpoint, load_checkpoint_config};
use crate::data::png::write_png;
use crate::data::synth::identity_mask;
use crate::error::{Error, Result};
use crate::nn::{Inpainter, ParamStore, Refiner, RefinerInput};
use crate::tensor::Graph;
use crate::warp::{ColorTexture, CoordMap, Image, UvMap};

use super::config::PipelineConfig;
use super::prepare::{check_extent, complete_textures, garment_view, identity_tensor, stage1_inputs, stage2_inputs, Stage2Batch};

/// Maps produced on the way to the output image.
#[derive(Clone, Debug)]
pub struct Intermediates {
    /// Splatted source coordinates C.
    pub coords: CoordMap,
    /// Completed coordinates D (coordinate modes only).
    pub completed_coords: Option<CoordMap>,
    /// Completed texture T.
    pub texture: ColorTexture,
    /// Texture warped into the target frame, W.
    pub warped: Image,
    /// Warp field E (coordinate modes only).
    pub warp: Option<CoordMap>,
}

/// Coordinate map rendered as `(x/(W−1), y/(H−1), known)` colours.
pub fn coord_map_image(c: &CoordMap, extent: (usize, usize)) -> Image {
    let n = c.width() * c.height();
    let sx = 1.0 / (extent.0.max(2) - 1) as f32;
    let sy = 1.0 / (extent.1.max(2) - 1) as f32;
    let mut data = vec![0.0f32; 3 * n];
    for k in 0..n {
        if c.known()[k] {
            data[k] = c.xs()[k] * sx;
            data[n + k] = c.ys()[k] * sy;
            data[2 * n + k] = 1.0;
        }
    }
    Image::from_planar(c.width(), c.height(), data).expect("image shape")
}

impl Intermediates {
    /// Writes `C.png`, `D.png`, `T.png`, `W.png` and `E.png` (when present).
    pub fn write_pngs(&self, dir: impl AsRef<Path>, extent: (usize, usize)) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_png(dir.join("C.png"), &coord_map_image(&self.coords, extent))?;
        if let Some(d) = &self.completed_coords {
            write_png(dir.join("D.png"), &coord_map_image(d, extent))?;
        }
        write_png(dir.join("T.png"), &self.texture.as_image())?;
        write_png(dir.join("W.png"), &self.warped)?;
        if let Some(e) = &self.warp {
            write_png(dir.join("E.png"), &coord_map_image(e, extent))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Inference {
    pub output: Image,
    pub intermediates: Intermediates,
}

/// One request: render the subject of `source` in the pose of `target_uv`.
pub struct Query<'a> {
    pub source: &'a Image,
    pub source_uv: &'a UvMap,
    pub target_uv: &'a UvMap,
    /// Person image and identity mask for garment transfer.
    pub identity: Option<(&'a Image, &'a [bool])>,
}

/// Trained networks ready for inference.
pub struct Pipeline {
    pub config: PipelineConfig,
    inpainter: Inpainter,
    f_params: ParamStore<f32>,
    refiner: Refiner,
    g_params: ParamStore<f32>,
}

impl Pipeline {
    /// `g_params` may also hold discriminator weights; they are ignored.
    pub fn new(config: PipelineConfig, f_params: ParamStore<f32>, g_params: &ParamStore<f32>) -> Result<Self> {
        let inpainter = Inpainter::new(config.inpainter_config())?;
        let refiner = Refiner::new(config.refiner_config())?;
        let g_params = g_params.with_prefix("g.");
        for (net, params, fresh) in [
            ("inpainter", &f_params, inpainter.init_params::<f32>(0)?),
            ("refiner", &g_params, refiner.init_params::<f32>(0)?),
        ] {
            for (name, t) in fresh.iter() {
                match params.get(name) {
                    Some(p) if p.shape() == t.shape() => {}
                    Some(p) => {
                        return Err(Error::invalid(format!(
                            "{net} checkpoint entry {name:?} has shape {:?}, configuration expects {:?}",
                            p.shape(),
                            t.shape()
                        )))
                    }
                    None => return Err(Error::invalid(format!("{net} checkpoint lacks {name:?}"))),
                }
            }
        }
        Ok(Pipeline {
            config,
            inpainter,
            f_params,
            refiner,
            g_params,
        })
    }

    /// Loads both checkpoints. Without an explicit configuration the
    /// refiner checkpoint's sidecar is used.
    pub fn load(inpainter_ckpt: &Path, refiner_ckpt: &Path, config: Option<PipelineConfig>) -> Result<Self> {
        for p in [inpainter_ckpt, refiner_ckpt] {
            if !p.is_file() {
                return Err(Error::invalid(format!("checkpoint {} not found", p.display())));
            }
        }
        let config = match config {
            Some(c) => c,
            None => {
                let v = load_checkpoint_config(refiner_ckpt)?
                    .ok_or_else(|| Error::invalid(format!("{} has no configuration sidecar", refiner_ckpt.display())))?;
                serde_json::from_value(v)?
            }
        };
        let f = load_checkpoint(inpainter_ckpt)?;
        let g = load_checkpoint(refiner_ckpt)?;
        Self::new(config, f, &g)
    }

    pub fn run(&self, queries: &[Query<'_>]) -> Result<Vec<Inference>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let cfg = &self.config;
        let extent = cfg.image_extent();
        for q in queries {
            check_extent("source image", (q.source.width(), q.source.height()), extent)?;
            check_extent("source uv", (q.source_uv.width(), q.source_uv.height()), extent)?;
            check_extent("target uv", (q.target_uv.width(), q.target_uv.height()), extent)?;
            match (cfg.garment_transfer, q.identity) {
                (true, None) => {
                    return Err(Error::invalid("refiner expects identity conditioning (masked image and mask)"))
                }
                (false, Some(_)) => return Err(Error::invalid("refiner was not trained for garment transfer")),
                _ => {}
            }
        }
        let views: Vec<(Image, UvMap)> = queries
            .iter()
            .map(|q| {
                if cfg.garment_transfer {
                    garment_view(q.source, q.source_uv, cfg.scene.identity_band)
                } else {
                    (q.source.clone(), q.source_uv.clone())
                }
            })
            .collect();
        let s1 = views
            .iter()
            .map(|(img, uv)| stage1_inputs(cfg.ablation, img, uv, None, cfg.texture_extent()))
            .collect::<Result<Vec<_>>>()?;
        let sources: Vec<&Image> = views.iter().map(|(img, _)| img).collect();
        let completed = complete_textures(&self.inpainter, &self.f_params, &s1.iter().collect::<Vec<_>>(), &sources)?;
        let mut items = Vec::with_capacity(queries.len());
        for ((q, (img, uv)), c) in queries.iter().zip(&views).zip(&completed) {
            let identity = match q.identity {
                Some((img, mask)) => {
                    check_extent("identity image", (img.width(), img.height()), extent)?;
                    Some(identity_tensor(img, mask)?)
                }
                None => None,
            };
            items.push(stage2_inputs(cfg.ablation, img, uv, q.target_uv, c, identity)?);
        }
        let batch = Stage2Batch::new(&items.iter().collect::<Vec<_>>())?;
        let mut g = Graph::new();
        let p = self.g_params.bind(&mut g, false);
        let target = g.constant(batch.target_stack);
        let source = g.constant(batch.source_stack);
        let identity_cond = batch.identity.map(|t| g.constant(t));
        let out = self.refiner.forward(
            &mut g,
            &p,
            &RefinerInput {
                target,
                source,
                identity_cond,
                warp: batch.warp.as_ref(),
            },
        )?;
        let out = g.value(out);
        let mut results = Vec::with_capacity(queries.len());
        for (i, ((s, c), item)) in s1.into_iter().zip(completed).zip(items).enumerate() {
            results.push(Inference {
                output: Image::from_tensor(&out.batch_item(i)?)?,
                intermediates: Intermediates {
                    coords: s.coords,
                    completed_coords: c.coords,
                    texture: c.texture,
                    warped: item.warped,
                    warp: item.warp,
                },
            });
        }
        Ok(results)
    }

    pub fn infer(&self, source: &Image, source_uv: &UvMap, target_uv: &UvMap) -> Result<Inference> {
        let q = Query {
            source,
            source_uv,
            target_uv,
            identity: None,
        };
        Ok(self.run(&[q])?.remove(0))
    }

    /// Dresses the person of `person` in the garment seen in `cloth`, keeping
    /// the person's identity patch and pose.
    pub fn transfer_garment(&self, person: &Image, person_uv: &UvMap, cloth: &Image, cloth_uv: &UvMap) -> Result<Inference> {
        let mask = identity_mask(person_uv, self.config.scene.identity_band);
        let q = Query {
            source: cloth,
            source_uv: cloth_uv,
            target_uv: person_uv,
            identity: Some((person, &mask)),
        };
        Ok(self.run(&[q])?.remove(0))
    }
}

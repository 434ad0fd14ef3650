//! Backward (gathering) warps built on bilinear sampling.

use crate::error::{Error, Result};
use crate::tensor::kernels::{grid_sample_forward, SampleGeom};
use crate::tensor::{Element, Graph, Var};

use super::{ColorTexture, CoordMap, Image, UvMap, WarpedMaps};

/// Differentiable bilinear sampling of `source` (`N×C×H×W`) at pixel
/// coordinates `coords` (`N×2×H′×W′`). Out-of-range coordinates clamp to
/// the border. Gradients flow to both the source and the coordinates.
pub fn sample_bilinear<T: Element>(g: &mut Graph<T>, source: Var, coords: Var) -> Result<Var> {
    g.grid_sample(source, coords)
}

/// Samples `channels` planes of `width×height` at the given coordinate
/// planes, in 64-bit.
fn gather(planes: &[f32], channels: usize, width: usize, height: usize, xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let npix = xs.len();
    let geom = SampleGeom {
        batch: 1,
        channels,
        src_h: height,
        src_w: width,
        out_h: 1,
        out_w: npix,
    };
    let src: Vec<f64> = planes.iter().map(|&v| v as f64).collect();
    let mut coords = Vec::with_capacity(2 * npix);
    coords.extend_from_slice(xs);
    coords.extend_from_slice(ys);
    grid_sample_forward(&geom, &src, &coords)
}

/// Completed texture `T[u, v] = S[D¹[u, v], D²[u, v]]`.
pub fn texture_from_coords(source: &Image, coords: &CoordMap) -> Result<ColorTexture> {
    if !coords.is_complete() {
        return Err(Error::invalid(format!(
            "texture_from_coords: {} unknown texels; inpaint first",
            coords.width() * coords.height() - coords.known_count()
        )));
    }
    let xs: Vec<f64> = coords.xs().iter().map(|&v| v as f64).collect();
    let ys: Vec<f64> = coords.ys().iter().map(|&v| v as f64).collect();
    let out = gather(source.planar(), 3, source.width(), source.height(), &xs, &ys);
    ColorTexture::from_planar(
        coords.width(),
        coords.height(),
        out.into_iter().map(|v| v as f32).collect(),
    )
}

/// Texel-space lookup positions of the valid pixels of `target`.
fn texel_positions(target: &UvMap, tex_w: usize, tex_h: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let su = (tex_w - 1) as f64;
    let sv = (tex_h - 1) as f64;
    let mut idx = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &valid) in target.valid_mask().iter().enumerate() {
        if valid {
            idx.push(i);
            xs.push(target.raw_u()[i] as f64 * su);
            ys.push(target.raw_v()[i] as f64 * sv);
        }
    }
    (idx, xs, ys)
}

/// `W[x, y] = T[M_N(x, y)]` on body pixels, zero elsewhere.
pub fn warp_texture(texture: &ColorTexture, target: &UvMap) -> Image {
    let (w, h) = (target.width(), target.height());
    let n = w * h;
    let mut data = vec![0.0f32; 3 * n];
    let (idx, xs, ys) = texel_positions(target, texture.width(), texture.height());
    if !idx.is_empty() {
        let vals = gather(texture.planar(), 3, texture.width(), texture.height(), &xs, &ys);
        let m = idx.len();
        for c in 0..3 {
            for (k, &i) in idx.iter().enumerate() {
                data[c * n + i] = vals[c * m + k] as f32;
            }
        }
    }
    Image::from_planar(w, h, data).expect("warp output shape")
}

/// Backward warps of the colour texture and of the completed coordinate
/// map into the target frame.
pub fn warp_to_target(texture: &ColorTexture, coords: &CoordMap, target: &UvMap) -> Result<WarpedMaps> {
    if !coords.is_complete() {
        return Err(Error::invalid("warp_to_target: coordinate map must be complete"));
    }
    if (coords.width(), coords.height()) != (texture.width(), texture.height()) {
        return Err(Error::shape(
            "warp_to_target",
            format!("{}x{}", texture.width(), texture.height()),
            format!("{}x{}", coords.width(), coords.height()),
        ));
    }
    let color = warp_texture(texture, target);
    let (w, h) = (target.width(), target.height());
    let mut e = CoordMap::unknown(w, h);
    let (idx, xs, ys) = texel_positions(target, coords.width(), coords.height());
    if !idx.is_empty() {
        let mut planes = coords.xs().to_vec();
        planes.extend_from_slice(coords.ys());
        let vals = gather(&planes, 2, coords.width(), coords.height(), &xs, &ys);
        let m = idx.len();
        for (k, &i) in idx.iter().enumerate() {
            e.set(i % w, i / w, vals[k] as f32, vals[m + k] as f32);
        }
    }
    Ok(WarpedMaps { color, coords: e })
}

/// Block-averages a warp field so it indexes a grid downsampled by
/// `factor`. Each output entry averages the known entries of its
/// `factor×factor` block, then maps the full-resolution pixel coordinate
/// `c` to `(c − (factor − 1)/2) / factor`, which sends the centre of a
/// full-resolution block to the index of the corresponding coarse cell.
/// Blocks without a known entry stay unknown.
pub fn downsample_warpfield(field: &CoordMap, factor: usize) -> Result<CoordMap> {
    if factor == 0 || !field.width().is_multiple_of(factor) || !field.height().is_multiple_of(factor) {
        return Err(Error::invalid(format!(
            "downsample_warpfield: factor {factor} does not divide {}x{}",
            field.width(),
            field.height()
        )));
    }
    let (ow, oh) = (field.width() / factor, field.height() / factor);
    let offset = 0.5 * (factor as f64 - 1.0);
    let mut out = CoordMap::unknown(ow, oh);
    for j in 0..oh {
        for i in 0..ow {
            let (mut sx, mut sy, mut cnt) = (0.0f64, 0.0f64, 0usize);
            for y in j * factor..(j + 1) * factor {
                for x in i * factor..(i + 1) * factor {
                    if let Some((cx, cy)) = field.get(x, y) {
                        sx += cx as f64;
                        sy += cy as f64;
                        cnt += 1;
                    }
                }
            }
            if cnt > 0 {
                let k = cnt as f64;
                out.set(
                    i,
                    j,
                    ((sx / k - offset) / factor as f64) as f32,
                    ((sy / k - offset) / factor as f64) as f32,
                );
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> Image {
        // single grey channel replicated: [[0,1],[2,3]]
        let p = [0.0, 1.0, 2.0, 3.0];
        let mut data = Vec::new();
        for _ in 0..3 {
            data.extend_from_slice(&p);
        }
        Image::from_planar(2, 2, data).unwrap()
    }

    fn sample_one(img: &Image, x: f64, y: f64) -> f64 {
        gather(img.planar(), 3, 2, 2, &[x], &[y])[0]
    }

    #[test]
    fn integer_and_midpoint_samples() {
        let img = two_by_two();
        assert_eq!(sample_one(&img, 1.0, 0.0), 1.0);
        assert_eq!(sample_one(&img, 0.5, 0.5), 1.5);
    }

    #[test]
    fn out_of_range_clamps_to_border() {
        let img = two_by_two();
        assert_eq!(sample_one(&img, -3.0, 0.0), 0.0);
        assert_eq!(sample_one(&img, 7.0, 9.0), 3.0);
    }

    #[test]
    fn texture_from_incomplete_map_errors() {
        let img = two_by_two();
        let c = CoordMap::unknown(2, 2);
        assert!(texture_from_coords(&img, &c).is_err());
    }

    #[test]
    fn constant_coords_give_uniform_texture() {
        let mut img = Image::filled(4, 4, [0.0, 0.0, 0.0]);
        img.set(2, 1, [0.3, 0.6, 0.9]);
        let mut d = CoordMap::unknown(3, 3);
        for j in 0..3 {
            for i in 0..3 {
                d.set(i, j, 2.0, 1.0);
            }
        }
        let t = texture_from_coords(&img, &d).unwrap();
        for j in 0..3 {
            for i in 0..3 {
                assert_eq!(t.get(i, j), [0.3, 0.6, 0.9]);
            }
        }
    }

    #[test]
    fn all_invalid_target_gives_empty_warp() {
        let t = ColorTexture::from_planar(2, 2, vec![0.5; 12]).unwrap();
        let d = CoordMap::identity(2, 2);
        let w = warp_to_target(&t, &d, &UvMap::new(5, 4)).unwrap();
        assert!(w.color.planar().iter().all(|&v| v == 0.0));
        assert_eq!(w.coords.known_count(), 0);
    }

    #[test]
    fn identity_field_downsamples_to_identity() {
        for factor in [2, 4, 8] {
            let e = CoordMap::identity(16, 8);
            let d = downsample_warpfield(&e, factor).unwrap();
            assert_eq!(d, CoordMap::identity(16 / factor, 8 / factor));
        }
    }

    #[test]
    fn unknown_block_stays_unknown() {
        let mut e = CoordMap::unknown(4, 4);
        e.set(0, 0, 1.0, 1.0);
        let d = downsample_warpfield(&e, 2).unwrap();
        assert!(d.get(0, 0).is_some());
        assert_eq!(d.known_count(), 1);
        assert!(downsample_warpfield(&e, 3).is_err());
    }
}

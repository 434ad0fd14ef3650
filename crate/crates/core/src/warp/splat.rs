//! Forward (scattered) warping from image space into texture space.
//!
//! Every valid pixel deposits its value onto the four texels around
//! `(u·(texW−1), v·(texH−1))` with bilinear weights. Values and weights are
//! accumulated separately and the texel value is their ratio. Pixels that
//! land on the same texel are blended by weight; there is no z-test.
//!
//! The accumulation is organised as a gather over texel rows: pixels are
//! first binned by the texel row they touch, then each output row sums its
//! own bins. This keeps writes disjoint so rows can be processed in
//! parallel without changing the summation order.

use crate::par;

use super::{ColorTexture, CoordMap, Image, UvMap};
use crate::error::{Error, Result};

/// Minimum accumulated weight for a texel to count as known.
pub const SPLAT_EPS: f64 = 1e-4;

struct Deposit {
    pixel: usize,
    col: usize,
    /// Horizontal fraction towards `col + 1`.
    fx: f64,
    /// Vertical weight for this row.
    wy: f64,
}

/// Returns per-channel texel values and the known mask.
fn splat_channels(
    map: &UvMap,
    values: &[&[f32]],
    tex_w: usize,
    tex_h: usize,
) -> (Vec<Vec<f32>>, Vec<bool>) {
    let mut bins: Vec<Vec<Deposit>> = (0..tex_h).map(|_| Vec::new()).collect();
    let su = (tex_w - 1) as f64;
    let sv = (tex_h - 1) as f64;
    for (pixel, &valid) in map.valid_mask().iter().enumerate() {
        if !valid {
            continue;
        }
        let tu = map.raw_u()[pixel] as f64 * su;
        let tv = map.raw_v()[pixel] as f64 * sv;
        let col = (tu.floor() as usize).min(tex_w - 1);
        let row = (tv.floor() as usize).min(tex_h - 1);
        let fx = tu - col as f64;
        let fy = tv - row as f64;
        bins[row].push(Deposit {
            pixel,
            col,
            fx,
            wy: 1.0 - fy,
        });
        if row + 1 < tex_h {
            bins[row + 1].push(Deposit {
                pixel,
                col,
                fx,
                wy: fy,
            });
        }
    }

    let channels = values.len();
    // Row layout: [known flags as 0/1, channel 0, channel 1, ...]
    let stride = (channels + 1) * tex_w;
    let mut rows = vec![0.0f32; tex_h * stride];
    par::for_each_chunk(&mut rows, stride, |r, out| {
        let mut weight = vec![0.0f64; tex_w];
        let mut acc = vec![0.0f64; channels * tex_w];
        for d in &bins[r] {
            let w0 = d.wy * (1.0 - d.fx);
            let w1 = d.wy * d.fx;
            let c1 = (d.col + 1).min(tex_w - 1);
            weight[d.col] += w0;
            weight[c1] += w1;
            for (ch, vals) in values.iter().enumerate() {
                let v = vals[d.pixel] as f64;
                acc[ch * tex_w + d.col] += w0 * v;
                acc[ch * tex_w + c1] += w1 * v;
            }
        }
        for col in 0..tex_w {
            if weight[col] > SPLAT_EPS {
                out[col] = 1.0;
                for ch in 0..channels {
                    out[(ch + 1) * tex_w + col] = (acc[ch * tex_w + col] / weight[col]) as f32;
                }
            }
        }
    });

    let n = tex_w * tex_h;
    let mut known = vec![false; n];
    let mut chans = vec![vec![0.0f32; n]; channels];
    for r in 0..tex_h {
        let row = &rows[r * stride..(r + 1) * stride];
        for col in 0..tex_w {
            known[r * tex_w + col] = row[col] > 0.5;
            for ch in 0..channels {
                chans[ch][r * tex_w + col] = row[(ch + 1) * tex_w + col];
            }
        }
    }
    (chans, known)
}

fn check_tex(tex_w: usize, tex_h: usize) -> Result<()> {
    if tex_w < 2 || tex_h < 2 {
        return Err(Error::invalid(format!("texture must be at least 2x2, got {tex_w}x{tex_h}")));
    }
    Ok(())
}

/// Rasterises the source pixel grid `(x, y)` into texture space, giving the
/// incomplete source-coordinate map C with its known mask.
pub fn splat_coordinates(source_map: &UvMap, tex_w: usize, tex_h: usize) -> Result<CoordMap> {
    check_tex(tex_w, tex_h)?;
    let (w, h) = (source_map.width(), source_map.height());
    let xs: Vec<f32> = (0..w * h).map(|i| (i % w) as f32).collect();
    let ys: Vec<f32> = (0..w * h).map(|i| (i / w) as f32).collect();
    let (mut chans, known) = splat_channels(source_map, &[&xs, &ys], tex_w, tex_h);
    let y = chans.pop().unwrap();
    let x = chans.pop().unwrap();
    CoordMap::from_parts(tex_w, tex_h, x, y, known)
}

/// Rasterises source colours into texture space. Unknown texels are zero.
pub fn splat_colors(
    source: &Image,
    source_map: &UvMap,
    tex_w: usize,
    tex_h: usize,
) -> Result<(ColorTexture, Vec<bool>)> {
    check_tex(tex_w, tex_h)?;
    if (source.width(), source.height()) != (source_map.width(), source_map.height()) {
        return Err(Error::shape(
            "splat_colors",
            format!("{}x{}", source_map.width(), source_map.height()),
            format!("{}x{}", source.width(), source.height()),
        ));
    }
    let n = source.width() * source.height();
    let p = source.planar();
    let (chans, known) = splat_channels(source_map, &[&p[..n], &p[n..2 * n], &p[2 * n..]], tex_w, tex_h);
    let data = chans.concat();
    Ok((ColorTexture::from_planar(tex_w, tex_h, data)?, known))
}

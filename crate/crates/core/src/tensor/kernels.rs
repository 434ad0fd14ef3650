//! Forward/backward kernels for the non-convolution graph ops.

use crate::par;

use super::Element;

/// Bilinear lookup with border clamping. Returns the four corner indices
/// (row-major within one plane), their weights and the clamp status of
/// each axis (`true` when the coordinate was inside the open range, i.e.
/// it carries a gradient).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap<T> {
    pub idx: [usize; 4],
    pub wt: [T; 4],
    pub fx: T,
    pub fy: T,
    pub live_x: bool,
    pub live_y: bool,
}

#[inline]
pub(crate) fn bilinear_tap<T: Element>(x: T, y: T, width: usize, height: usize) -> Tap<T> {
    let max_x = T::from_usize(width - 1).unwrap();
    let max_y = T::from_usize(height - 1).unwrap();
    let live_x = x > T::zero() && x < max_x;
    let live_y = y > T::zero() && y < max_y;
    // NaN coordinates clamp to the origin.
    let cx = if x.is_nan() { T::zero() } else { x.max(T::zero()).min(max_x) };
    let cy = if y.is_nan() { T::zero() } else { y.max(T::zero()).min(max_y) };
    let x0 = cx.floor();
    let y0 = cy.floor();
    let fx = cx - x0;
    let fy = cy - y0;
    let x0 = x0.to_usize().unwrap();
    let y0 = y0.to_usize().unwrap();
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let one = T::one();
    Tap {
        idx: [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1],
        wt: [
            (one - fx) * (one - fy),
            fx * (one - fy),
            (one - fx) * fy,
            fx * fy,
        ],
        fx,
        fy,
        live_x,
        live_y,
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct SampleGeom {
    pub batch: usize,
    pub channels: usize,
    pub src_h: usize,
    pub src_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub(crate) fn grid_sample_forward<T: Element>(g: &SampleGeom, src: &[T], coords: &[T]) -> Vec<T> {
    let src_plane = g.src_h * g.src_w;
    let npix = g.out_h * g.out_w;
    let mut out = vec![T::zero(); g.batch * g.channels * npix];
    par::for_each_chunk(&mut out, g.channels * npix, |n, dst| {
        let cx = &coords[n * 2 * npix..n * 2 * npix + npix];
        let cy = &coords[n * 2 * npix + npix..(n + 1) * 2 * npix];
        let img = &src[n * g.channels * src_plane..(n + 1) * g.channels * src_plane];
        for p in 0..npix {
            let tap = bilinear_tap(cx[p], cy[p], g.src_w, g.src_h);
            for c in 0..g.channels {
                let plane = &img[c * src_plane..(c + 1) * src_plane];
                let mut v = T::zero();
                for k in 0..4 {
                    v += tap.wt[k] * plane[tap.idx[k]];
                }
                dst[c * npix + p] = v;
            }
        }
    });
    out
}

/// Returns (d source, d coords).
pub(crate) fn grid_sample_backward<T: Element>(
    g: &SampleGeom,
    src: &[T],
    coords: &[T],
    dy: &[T],
    need: [bool; 2],
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let src_plane = g.src_h * g.src_w;
    let npix = g.out_h * g.out_w;
    let [need_src, need_coords] = need;

    let dsrc = need_src.then(|| {
        let mut dsrc = vec![T::zero(); g.batch * g.channels * src_plane];
        par::for_each_chunk(&mut dsrc, g.channels * src_plane, |n, d| {
            let cx = &coords[n * 2 * npix..n * 2 * npix + npix];
            let cy = &coords[n * 2 * npix + npix..(n + 1) * 2 * npix];
            let dyn_ = &dy[n * g.channels * npix..(n + 1) * g.channels * npix];
            for p in 0..npix {
                let tap = bilinear_tap(cx[p], cy[p], g.src_w, g.src_h);
                for c in 0..g.channels {
                    let gv = dyn_[c * npix + p];
                    let plane = &mut d[c * src_plane..(c + 1) * src_plane];
                    for k in 0..4 {
                        plane[tap.idx[k]] += tap.wt[k] * gv;
                    }
                }
            }
        });
        dsrc
    });

    let dcoords = need_coords.then(|| {
        let mut dc = vec![T::zero(); g.batch * 2 * npix];
        par::for_each_chunk(&mut dc, 2 * npix, |n, d| {
            let cx = &coords[n * 2 * npix..n * 2 * npix + npix];
            let cy = &coords[n * 2 * npix + npix..(n + 1) * 2 * npix];
            let img = &src[n * g.channels * src_plane..(n + 1) * g.channels * src_plane];
            let dyn_ = &dy[n * g.channels * npix..(n + 1) * g.channels * npix];
            let one = T::one();
            for p in 0..npix {
                let tap = bilinear_tap(cx[p], cy[p], g.src_w, g.src_h);
                let (mut gx, mut gy) = (T::zero(), T::zero());
                for c in 0..g.channels {
                    let plane = &img[c * src_plane..(c + 1) * src_plane];
                    let [s00, s01, s10, s11] = tap.idx.map(|i| plane[i]);
                    let gv = dyn_[c * npix + p];
                    gx += gv * ((one - tap.fy) * (s01 - s00) + tap.fy * (s11 - s10));
                    gy += gv * ((one - tap.fx) * (s10 - s00) + tap.fx * (s11 - s01));
                }
                d[p] = if tap.live_x { gx } else { T::zero() };
                d[npix + p] = if tap.live_y { gy } else { T::zero() };
            }
        });
        dc
    });

    (dsrc, dcoords)
}

/// 2×2 average pooling over `planes` planes of `h×w`.
pub(crate) fn avg_pool2<T: Element>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut out = vec![T::zero(); planes * oh * ow];
    par::for_each_chunk(&mut out, oh * ow, |p, dst| {
        let src = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let a = src[2 * oy * w + 2 * ox];
                let b = src[2 * oy * w + 2 * ox + 1];
                let c = src[(2 * oy + 1) * w + 2 * ox];
                let d = src[(2 * oy + 1) * w + 2 * ox + 1];
                dst[oy * ow + ox] = (a + b + c + d) * quarter;
            }
        }
    });
    out
}

pub(crate) fn avg_pool2_backward<T: Element>(dy: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut dx = vec![T::zero(); planes * h * w];
    par::for_each_chunk(&mut dx, h * w, |p, dst| {
        let src = &dy[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * ow + x / 2] * quarter;
            }
        }
    });
    dx
}

/// Nearest-neighbour ×2 upsampling of `planes` planes of `h×w`.
pub(crate) fn upsample2<T: Element>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * oh * ow];
    par::for_each_chunk(&mut out, oh * ow, |p, dst| {
        let src = &x[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                dst[y * ow + x] = src[(y / 2) * w + x / 2];
            }
        }
    });
    out
}

pub(crate) fn upsample2_backward<T: Element>(dy: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let ow = 2 * w;
    let mut dx = vec![T::zero(); planes * h * w];
    par::for_each_chunk(&mut dx, h * w, |p, dst| {
        let src = &dy[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..h {
            for x in 0..w {
                let r0 = 2 * y * ow + 2 * x;
                let r1 = r0 + ow;
                dst[y * w + x] = src[r0] + src[r0 + 1] + src[r1] + src[r1 + 1];
            }
        }
    });
    dx
}

/// Nearest-neighbour L1: per pixel, the smallest channel-mean L1 distance
/// between `pred` and any `target` pixel in the `window×window`
/// neighbourhood, averaged over pixels. Returns the loss and, per pixel,
/// the flat index (within its plane) of the selected target pixel.
pub(crate) fn nn_loss_forward<T: Element>(
    pred: &[T],
    target: &[T],
    dims: (usize, usize, usize, usize),
    window: usize,
) -> (T, Vec<u32>) {
    let (n, c, h, w) = dims;
    let r = (window / 2) as isize;
    let plane = h * w;
    let inv_c = T::one() / T::from_usize(c).unwrap();
    let per_item = par::map_range(n, |b| {
        let p = &pred[b * c * plane..(b + 1) * c * plane];
        let t = &target[b * c * plane..(b + 1) * c * plane];
        let mut sel = vec![0u32; plane];
        let mut total = T::zero();
        for y in 0..h as isize {
            for x in 0..w as isize {
                let here = (y as usize) * w + x as usize;
                let mut best = T::infinity();
                let mut best_idx = here;
                for dy in -r..=r {
                    let ty = y + dy;
                    if ty < 0 || ty >= h as isize {
                        continue;
                    }
                    for dx in -r..=r {
                        let tx = x + dx;
                        if tx < 0 || tx >= w as isize {
                            continue;
                        }
                        let there = ty as usize * w + tx as usize;
                        let mut d = T::zero();
                        for ch in 0..c {
                            d += (p[ch * plane + here] - t[ch * plane + there]).abs();
                        }
                        let d = d * inv_c;
                        if d < best {
                            best = d;
                            best_idx = there;
                        }
                    }
                }
                sel[here] = best_idx as u32;
                total += best;
            }
        }
        (total, sel)
    });
    let mut total = T::zero();
    let mut sel = Vec::with_capacity(n * plane);
    for (t, s) in per_item {
        total += t;
        sel.extend(s);
    }
    (total / T::from_usize(n * plane).unwrap(), sel)
}

pub(crate) fn nn_loss_backward<T: Element>(
    pred: &[T],
    target: &[T],
    dims: (usize, usize, usize, usize),
    sel: &[u32],
    dloss: T,
    need: [bool; 2],
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (n, c, h, w) = dims;
    let plane = h * w;
    let scale = dloss / T::from_usize(n * plane * c).unwrap();
    let mut dp = need[0].then(|| vec![T::zero(); pred.len()]);
    let mut dt = need[1].then(|| vec![T::zero(); target.len()]);
    for b in 0..n {
        for here in 0..plane {
            let there = sel[b * plane + here] as usize;
            for ch in 0..c {
                let pi = (b * c + ch) * plane + here;
                let ti = (b * c + ch) * plane + there;
                let diff = pred[pi] - target[ti];
                let s = if diff > T::zero() {
                    scale
                } else if diff < T::zero() {
                    -scale
                } else {
                    T::zero()
                };
                if let Some(dp) = dp.as_mut() {
                    dp[pi] += s;
                }
                if let Some(dt) = dt.as_mut() {
                    dt[ti] += -s;
                }
            }
        }
    }
    (dp, dt)
}

/// Gram matrices `F·Fᵀ / (C·H·W)` per batch item, `F` being `C × H·W`.
pub(crate) fn gram<T: Element>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let norm = T::one() / T::from_usize(c * hw).unwrap();
    let mut out = vec![T::zero(); n * c * c];
    par::for_each_chunk(&mut out, c * c, |b, g| {
        let f = &x[b * c * hw..(b + 1) * c * hw];
        T::gemm(c, hw, c, f, false, f, true, T::zero(), g);
        for v in g.iter_mut() {
            *v = *v * norm;
        }
    });
    out
}

pub(crate) fn gram_backward<T: Element>(x: &[T], dg: &[T], _n: usize, c: usize, hw: usize) -> Vec<T> {
    let norm = T::one() / T::from_usize(c * hw).unwrap();
    let mut dx = vec![T::zero(); x.len()];
    par::for_each_chunk(&mut dx, c * hw, |b, d| {
        let f = &x[b * c * hw..(b + 1) * c * hw];
        let gb = &dg[b * c * c..(b + 1) * c * c];
        let mut sym = vec![T::zero(); c * c];
        for i in 0..c {
            for j in 0..c {
                sym[i * c + j] = (gb[i * c + j] + gb[j * c + i]) * norm;
            }
        }
        T::gemm(c, c, hw, &sym, false, f, false, T::zero(), d);
    });
    dx
}

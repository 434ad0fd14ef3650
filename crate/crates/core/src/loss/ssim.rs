//! Gaussian-windowed SSIM on images in `[0, 1]`.

use crate::error::{Error, Result};
use crate::warp::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Per-window SSIM averaged over channels. Entry `(i, j)` belongs to the
/// window centred on pixel `(i + 5, j + 5)`; only fully inside windows exist.
#[derive(Clone, Debug, PartialEq)]
pub struct SsimMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl SsimMap {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

pub(crate) fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Valid separable filtering of a `w×h` plane.
fn filter(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// SSIM map of two planar images with `channels` planes of `width×height`.
pub fn ssim_planes(a: &[f32], b: &[f32], channels: usize, width: usize, height: usize) -> Result<SsimMap> {
    let n = width * height;
    if a.len() != channels * n || b.len() != channels * n {
        return Err(Error::shape("ssim", channels * n, format!("{} and {}", a.len(), b.len())));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW || channels == 0 {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {width}x{height}"
        )));
    }
    let k = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (ow, oh) = (width + 1 - SSIM_WINDOW, height + 1 - SSIM_WINDOW);
    let mut acc = vec![0.0; ow * oh];
    for c in 0..channels {
        let pa: Vec<f64> = a[c * n..(c + 1) * n].iter().map(|&v| v as f64).collect();
        let pb: Vec<f64> = b[c * n..(c + 1) * n].iter().map(|&v| v as f64).collect();
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(&pb).map(|(&x, &y)| f(x, y)).collect() };
        let mu_a = filter(&pa, width, height, &k);
        let mu_b = filter(&pb, width, height, &k);
        let aa = filter(&prod(&|x, _| x * x), width, height, &k);
        let bb = filter(&prod(&|_, y| y * y), width, height, &k);
        let ab = filter(&prod(&|x, y| x * y), width, height, &k);
        for i in 0..ow * oh {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            acc[i] += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    acc.iter_mut().for_each(|v| *v /= channels as f64);
    Ok(SsimMap {
        width: ow,
        height: oh,
        values: acc,
    })
}

pub fn ssim_map(a: &Image, b: &Image) -> Result<SsimMap> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::shape(
            "ssim",
            format!("{}x{}", a.width(), a.height()),
            format!("{}x{}", b.width(), b.height()),
        ));
    }
    ssim_planes(a.planar(), b.planar(), 3, a.width(), a.height())
}

/// Mean SSIM over all windows.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_map(a, b)?.mean())
}

/// SSIM restricted to `mask`: both images are zeroed outside it and the
/// windows whose centre pixel is set are averaged.
pub fn ssim_masked(a: &Image, b: &Image, mask: &[bool]) -> Result<f64> {
    if mask.len() != a.width() * a.height() {
        return Err(Error::shape("ssim mask", a.width() * a.height(), mask.len()));
    }
    let map = ssim_map(&a.masked(mask), &b.masked(mask))?;
    let r = SSIM_WINDOW / 2;
    let (mut sum, mut count) = (0.0, 0usize);
    for j in 0..map.height {
        for i in 0..map.width {
            if mask[(j + r) * a.width() + i + r] {
                sum += map.values[j * map.width + i];
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid("ssim mask selects no window centre"));
    }
    Ok(sum / count as f64)
}

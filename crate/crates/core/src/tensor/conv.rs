//! 2-D cross-correlation kernels.
//!
//! Two interchangeable implementations: a direct loop nest and an im2col
//! formulation that hands the inner product to a blocked GEMM. Both produce
//! the same values up to summation order; the graph uses im2col unless told
//! otherwise.

use crate::error::{Error, Result};
use crate::par;

use super::Element;

/// Resolved extents of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let [batch, in_channels, height, width] = *input else {
            return Err(Error::shape("conv2d", "rank-4 input", format!("{input:?}")));
        };
        let [out_channels, w_in, kh, kw] = *weight else {
            return Err(Error::shape("conv2d", "rank-4 weight", format!("{weight:?}")));
        };
        if kh != kw {
            return Err(Error::shape("conv2d", "square kernel", format!("{kh}x{kw}")));
        }
        if w_in != in_channels {
            return Err(Error::shape("conv2d", in_channels, format!("weight with {w_in} input channels")));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be positive"));
        }
        let (ph, pw) = (height + 2 * padding, width + 2 * padding);
        if ph < kh || pw < kh {
            return Err(Error::shape(
                "conv2d",
                format!("padded extent >= {kh}"),
                format!("{ph}x{pw}"),
            ));
        }
        Ok(ConvGeom {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kernel: kh,
            stride,
            padding,
            out_height: (ph - kh) / stride + 1,
            out_width: (pw - kh) / stride + 1,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_height, self.out_width]
    }

    fn in_plane(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    fn out_plane(&self) -> usize {
        self.out_channels * self.out_height * self.out_width
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Multiply-accumulate count of one forward pass.
    pub fn macs(&self) -> usize {
        self.batch * self.out_plane() * self.patch_len()
    }
}

/// Unfolds one image (`C×H×W`) into a `C·k·k × Ho·Wo` column matrix.
fn im2col<T: Element>(g: &ConvGeom, image: &[T], cols: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let (h, w) = (g.height as isize, g.width as isize);
    let npix = g.out_pixels();
    for c in 0..g.in_channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * npix..(row + 1) * npix];
                for oy in 0..g.out_height {
                    let iy = (oy * s) as isize - p + ki as isize;
                    let out_row = &mut dst[oy * g.out_width..(oy + 1) * g.out_width];
                    if iy < 0 || iy >= h {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * s) as isize - p + kj as isize;
                        *v = if ix < 0 || ix >= w {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into an image gradient.
fn col2im<T: Element>(g: &ConvGeom, cols: &[T], image: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let (h, w) = (g.height as isize, g.width as isize);
    let npix = g.out_pixels();
    for c in 0..g.in_channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * npix..(row + 1) * npix];
                for oy in 0..g.out_height {
                    let iy = (oy * s) as isize - p + ki as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let in_row = &src[oy * g.out_width..(oy + 1) * g.out_width];
                    for (ox, &v) in in_row.iter().enumerate() {
                        let ix = (ox * s) as isize - p + kj as isize;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub fn forward_im2col<T: Element>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); g.batch * g.out_plane()];
    let npix = g.out_pixels();
    par::for_each_chunk(&mut out, g.out_plane(), |n, y| {
        let mut cols = vec![T::zero(); g.patch_len() * npix];
        im2col(g, &x[n * g.in_plane()..(n + 1) * g.in_plane()], &mut cols);
        if let Some(b) = b {
            for (o, row) in y.chunks_mut(npix).enumerate() {
                row.fill(b[o]);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(g.out_channels, g.patch_len(), npix, w, false, &cols, false, beta, y);
    });
    out
}

pub fn forward_direct<T: Element>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); g.batch * g.out_plane()];
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    par::for_each_chunk(&mut out, g.out_plane(), |n, y| {
        let img = &x[n * g.in_plane()..(n + 1) * g.in_plane()];
        for o in 0..g.out_channels {
            for oy in 0..g.out_height {
                for ox in 0..g.out_width {
                    let mut acc = b.map_or(T::zero(), |b| b[o]);
                    for c in 0..g.in_channels {
                        for ki in 0..k {
                            let iy = (oy * s) as isize - p + ki as isize;
                            if iy < 0 || iy >= g.height as isize {
                                continue;
                            }
                            for kj in 0..k {
                                let ix = (ox * s) as isize - p + kj as isize;
                                if ix < 0 || ix >= g.width as isize {
                                    continue;
                                }
                                let xv = img[(c * g.height + iy as usize) * g.width + ix as usize];
                                acc += w[((o * g.in_channels + c) * k + ki) * k + kj] * xv;
                            }
                        }
                    }
                    y[(o * g.out_height + oy) * g.out_width + ox] = acc;
                }
            }
        }
    });
    out
}

/// Gradients of one convolution. Fields are `None` when not requested.
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

fn bias_grad<T: Element>(g: &ConvGeom, dy: &[T]) -> Vec<T> {
    let npix = g.out_pixels();
    let mut db = vec![T::zero(); g.out_channels];
    for n in 0..g.batch {
        for (o, acc) in db.iter_mut().enumerate() {
            let start = n * g.out_plane() + o * npix;
            *acc += dy[start..start + npix].iter().copied().sum::<T>();
        }
    }
    db
}

pub fn backward_im2col<T: Element>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let npix = g.out_pixels();
    let plen = g.patch_len();
    let [need_x, need_w, need_b] = need;

    let input = need_x.then(|| {
        let mut dx = vec![T::zero(); g.batch * g.in_plane()];
        par::for_each_chunk(&mut dx, g.in_plane(), |n, dxn| {
            let mut cols = vec![T::zero(); plen * npix];
            let dyn_ = &dy[n * g.out_plane()..(n + 1) * g.out_plane()];
            T::gemm(plen, g.out_channels, npix, w, true, dyn_, false, T::zero(), &mut cols);
            col2im(g, &cols, dxn);
        });
        dx
    });

    let weight = need_w.then(|| {
        let partials = par::map_range(g.batch, |n| {
            let mut cols = vec![T::zero(); plen * npix];
            im2col(g, &x[n * g.in_plane()..(n + 1) * g.in_plane()], &mut cols);
            let mut dw = vec![T::zero(); g.out_channels * plen];
            let dyn_ = &dy[n * g.out_plane()..(n + 1) * g.out_plane()];
            T::gemm(g.out_channels, npix, plen, dyn_, false, &cols, true, T::zero(), &mut dw);
            dw
        });
        let mut dw = vec![T::zero(); g.out_channels * plen];
        for p in partials {
            for (a, b) in dw.iter_mut().zip(p) {
                *a += b;
            }
        }
        dw
    });

    ConvGrads {
        input,
        weight,
        bias: need_b.then(|| bias_grad(g, dy)),
    }
}

pub fn backward_direct<T: Element>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let [need_x, need_w, need_b] = need;
    let mut dx = vec![T::zero(); if need_x { g.batch * g.in_plane() } else { 0 }];
    let mut dw = vec![T::zero(); if need_w { w.len() } else { 0 }];
    for n in 0..g.batch {
        for o in 0..g.out_channels {
            for oy in 0..g.out_height {
                for ox in 0..g.out_width {
                    let gy = dy[((n * g.out_channels + o) * g.out_height + oy) * g.out_width + ox];
                    for c in 0..g.in_channels {
                        for ki in 0..k {
                            let iy = (oy * s) as isize - p + ki as isize;
                            if iy < 0 || iy >= g.height as isize {
                                continue;
                            }
                            for kj in 0..k {
                                let ix = (ox * s) as isize - p + kj as isize;
                                if ix < 0 || ix >= g.width as isize {
                                    continue;
                                }
                                let xi = ((n * g.in_channels + c) * g.height + iy as usize) * g.width
                                    + ix as usize;
                                let wi = ((o * g.in_channels + c) * k + ki) * k + kj;
                                if need_x {
                                    dx[xi] += w[wi] * gy;
                                }
                                if need_w {
                                    dw[wi] += x[xi] * gy;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    ConvGrads {
        input: need_x.then_some(dx),
        weight: need_w.then_some(dw),
        bias: need_b.then(|| bias_grad(g, dy)),
    }
}

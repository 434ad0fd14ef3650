//! Geometric transfer between image space `[x, y]` and texture space
//! `[u, v]`.
//!
//! Conventions used everywhere (including file formats):
//! * `(u, v)` are normalised to `[0, 1]`; texel column `u·(texW−1)`,
//!   texel row `v·(texH−1)`.
//! * image coordinates are in pixels with pixel centres at integers, the
//!   top-left pixel being `(0, 0)`.
//! * unknown coordinate entries hold [`SENTINEL`] whenever they are
//!   materialised as tensors.

mod sample;
mod splat;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub use sample::{
    downsample_warpfield, sample_bilinear, texture_from_coords, warp_texture, warp_to_target,
};
pub use splat::{splat_colors, splat_coordinates, SPLAT_EPS};

/// Fill value for unknown coordinates.
pub const SENTINEL: f32 = -10.0;

/// Per-pixel texture coordinates with a body mask.
#[derive(Clone, Debug, PartialEq)]
pub struct UvMap {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
    valid: Vec<bool>,
}

impl UvMap {
    /// An all-invalid map.
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        UvMap {
            width,
            height,
            u: vec![0.0; n],
            v: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        u: Vec<f32>,
        v: Vec<f32>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height;
        if u.len() != n || v.len() != n || valid.len() != n {
            return Err(Error::shape("UvMap::from_parts", n, format!("{}/{}/{}", u.len(), v.len(), valid.len())));
        }
        for i in 0..n {
            if valid[i] && !((0.0..=1.0).contains(&u[i]) && (0.0..=1.0).contains(&v[i])) {
                return Err(Error::invalid(format!(
                    "valid pixel {i} has (u, v) = ({}, {}) outside [0, 1]",
                    u[i], v[i]
                )));
            }
        }
        Ok(UvMap {
            width,
            height,
            u,
            v,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn set(&mut self, x: usize, y: usize, u: f32, v: f32) {
        let i = y * self.width + x;
        self.u[i] = u.clamp(0.0, 1.0);
        self.v[i] = v.clamp(0.0, 1.0);
        self.valid[i] = true;
    }

    pub fn clear(&mut self, x: usize, y: usize) {
        self.valid[y * self.width + x] = false;
    }

    /// `(u, v)` of a valid pixel.
    pub fn get(&self, x: usize, y: usize) -> Option<(f32, f32)> {
        let i = y * self.width + x;
        self.valid[i].then(|| (self.u[i], self.v[i]))
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Raw stored `u` values, including those of invalid pixels.
    pub fn raw_u(&self) -> &[f32] {
        &self.u
    }

    pub fn raw_v(&self) -> &[f32] {
        &self.v
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    /// `1×3×H×W` stack `(u, v, valid)` with invalid pixels zeroed.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let n = self.width * self.height;
        let mut data = vec![T::zero(); 3 * n];
        for i in 0..n {
            if self.valid[i] {
                data[i] = T::from_f32(self.u[i]).unwrap();
                data[n + i] = T::from_f32(self.v[i]).unwrap();
                data[2 * n + i] = T::one();
            }
        }
        Tensor::new([1, 3, self.height, self.width], data).expect("uv tensor shape")
    }

    /// `1×1×H×W` validity mask.
    pub fn mask_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::from_fn([1, 1, self.height, self.width], |i| {
            if self.valid[i] {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}

/// Planar RGB image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let n = width * height;
        let mut data = Vec::with_capacity(3 * n);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, n));
        }
        Image {
            width,
            height,
            data,
        }
    }

    /// From planar `R…G…B…` data.
    pub fn from_planar(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::shape("Image::from_planar", 3 * width * height, data.len()));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    /// From a `1×3×H×W` tensor.
    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if n != 1 || c != 3 {
            return Err(Error::shape("Image::from_tensor", "1x3xHxW", format!("{:?}", t.shape())));
        }
        Ok(Image {
            width: w,
            height: h,
            data: t.data().iter().map(|x| x.to_f32().unwrap_or(0.0)).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn planar(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let n = self.width * self.height;
        let i = y * self.width + x;
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let n = self.width * self.height;
        let i = y * self.width + x;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[c * n + i] = v;
        }
    }

    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::new(
            [1, 3, self.height, self.width],
            self.data.iter().map(|&x| T::from_f32(x).unwrap()).collect(),
        )
        .expect("image tensor shape")
    }

    /// Keeps pixels where `mask` is set and zeroes the rest.
    pub fn masked(&self, mask: &[bool]) -> Image {
        let n = self.width * self.height;
        let mut out = self.clone();
        for c in 0..3 {
            for i in 0..n {
                if !mask[i] {
                    out.data[c * n + i] = 0.0;
                }
            }
        }
        out
    }
}

/// Per-entry source-image coordinates (pixels) with a known mask. Used for
/// the texture-space maps C and D and for the image-space warp field E.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordMap {
    width: usize,
    height: usize,
    x: Vec<f32>,
    y: Vec<f32>,
    known: Vec<bool>,
}

pub type CoordTexture = CoordMap;

impl CoordMap {
    pub fn unknown(width: usize, height: usize) -> Self {
        let n = width * height;
        CoordMap {
            width,
            height,
            x: vec![SENTINEL; n],
            y: vec![SENTINEL; n],
            known: vec![false; n],
        }
    }

    /// Builds a map; unknown entries are normalised to the sentinel.
    pub fn from_parts(
        width: usize,
        height: usize,
        mut x: Vec<f32>,
        mut y: Vec<f32>,
        known: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height;
        if x.len() != n || y.len() != n || known.len() != n {
            return Err(Error::shape("CoordMap::from_parts", n, format!("{}/{}/{}", x.len(), y.len(), known.len())));
        }
        for i in 0..n {
            if !known[i] {
                x[i] = SENTINEL;
                y[i] = SENTINEL;
            }
        }
        Ok(CoordMap {
            width,
            height,
            x,
            y,
            known,
        })
    }

    /// A fully known map from a `1×2×H×W` tensor.
    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if n != 1 || c != 2 {
            return Err(Error::shape("CoordMap::from_tensor", "1x2xHxW", format!("{:?}", t.shape())));
        }
        let d = t.data();
        let plane = h * w;
        Ok(CoordMap {
            width: w,
            height: h,
            x: d[..plane].iter().map(|v| v.to_f32().unwrap_or(0.0)).collect(),
            y: d[plane..].iter().map(|v| v.to_f32().unwrap_or(0.0)).collect(),
            known: vec![true; plane],
        })
    }

    /// Identity meshgrid: entry `(i, j)` holds `(i, j)`.
    pub fn identity(width: usize, height: usize) -> Self {
        let n = width * height;
        CoordMap {
            width,
            height,
            x: (0..n).map(|i| (i % width) as f32).collect(),
            y: (0..n).map(|i| (i / width) as f32).collect(),
            known: vec![true; n],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, i: usize, j: usize) -> Option<(f32, f32)> {
        let k = j * self.width + i;
        self.known[k].then(|| (self.x[k], self.y[k]))
    }

    pub fn set(&mut self, i: usize, j: usize, x: f32, y: f32) {
        let k = j * self.width + i;
        self.x[k] = x;
        self.y[k] = y;
        self.known[k] = true;
    }

    pub fn xs(&self) -> &[f32] {
        &self.x
    }

    pub fn ys(&self) -> &[f32] {
        &self.y
    }

    pub fn known(&self) -> &[bool] {
        &self.known
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|&&k| k).count()
    }

    pub fn is_complete(&self) -> bool {
        self.known.iter().all(|&k| k)
    }

    /// `1×2×H×W` coordinates in pixels, sentinel at unknown entries.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let mut data: Vec<T> = self.x.iter().map(|&v| T::from_f32(v).unwrap()).collect();
        data.extend(self.y.iter().map(|&v| T::from_f32(v).unwrap()));
        Tensor::new([1, 2, self.height, self.width], data).expect("coord tensor shape")
    }

    /// `1×2×H×W` coordinates where unknown entries point at themselves
    /// (identity warp). Used to drive deformable sampling.
    pub fn to_tensor_identity_filled<T: Element>(&self) -> Tensor<T> {
        let n = self.width * self.height;
        let mut data = vec![T::zero(); 2 * n];
        for k in 0..n {
            let (x, y) = if self.known[k] {
                (self.x[k], self.y[k])
            } else {
                ((k % self.width) as f32, (k / self.width) as f32)
            };
            data[k] = T::from_f32(x).unwrap();
            data[n + k] = T::from_f32(y).unwrap();
        }
        Tensor::new([1, 2, self.height, self.width], data).expect("coord tensor shape")
    }

    /// `1×1×H×W` known mask.
    pub fn mask_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::from_fn([1, 1, self.height, self.width], |i| {
            if self.known[i] {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Network encoding: `1×3×H×W` = (x/(W−1), y/(H−1), known) for known
    /// entries, and (sentinel, sentinel, 0) elsewhere. `extent` is the
    /// `(width, height)` of the image the coordinates refer to.
    pub fn network_input<T: Element>(&self, extent: (usize, usize)) -> Tensor<T> {
        let n = self.width * self.height;
        let sx = 1.0 / (extent.0.max(2) - 1) as f32;
        let sy = 1.0 / (extent.1.max(2) - 1) as f32;
        let mut data = vec![T::zero(); 3 * n];
        let sentinel = T::from_f32(SENTINEL).unwrap();
        for k in 0..n {
            if self.known[k] {
                data[k] = T::from_f32(self.x[k] * sx).unwrap();
                data[n + k] = T::from_f32(self.y[k] * sy).unwrap();
                data[2 * n + k] = T::one();
            } else {
                data[k] = sentinel;
                data[n + k] = sentinel;
            }
        }
        Tensor::new([1, 3, self.height, self.width], data).expect("coord input shape")
    }
}

/// Per-texel RGB in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorTexture {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ColorTexture {
    /// From planar RGB; values are clamped to `[0, 1]`.
    pub fn from_planar(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::shape("ColorTexture::from_planar", 3 * width * height, data.len()));
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(ColorTexture {
            width,
            height,
            data,
        })
    }

    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Result<Self> {
        let img = Image::from_tensor(t)?;
        Self::from_planar(img.width, img.height, img.data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn planar(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, u: usize, v: usize) -> [f32; 3] {
        let n = self.width * self.height;
        let i = v * self.width + u;
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::new(
            [1, 3, self.height, self.width],
            self.data.iter().map(|&x| T::from_f32(x).unwrap()).collect(),
        )
        .expect("texture tensor shape")
    }

    pub fn as_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.clone(),
        }
    }
}

/// Target-frame maps produced by backward warping through `M_N`.
#[derive(Clone, Debug)]
pub struct WarpedMaps {
    /// Warped colour texture; zero outside the body.
    pub color: Image,
    /// Warped source coordinates; unknown outside the body.
    pub coords: CoordMap,
}

/// `1×2×H×W` meshgrid normalised to `[0, 1]` (x then y).
pub fn meshgrid<T: Element>(width: usize, height: usize) -> Tensor<T> {
    let n = width * height;
    let sx = 1.0 / (width.max(2) - 1) as f64;
    let sy = 1.0 / (height.max(2) - 1) as f64;
    Tensor::from_fn([1, 2, height, width], |k| {
        let p = k % n;
        if k < n {
            T::from_f64_lossy((p % width) as f64 * sx)
        } else {
            T::from_f64_lossy((p / width) as f64 * sy)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uvmap_rejects_out_of_range_valid_pixels() {
        let r = UvMap::from_parts(1, 1, vec![1.5], vec![0.0], vec![true]);
        assert!(r.is_err());
        let ok = UvMap::from_parts(1, 1, vec![1.5], vec![0.0], vec![false]);
        assert!(ok.is_ok());
    }

    #[test]
    fn coordmap_normalises_unknowns_to_sentinel() {
        let c = CoordMap::from_parts(2, 1, vec![3.0, 4.0], vec![1.0, 1.0], vec![true, false]).unwrap();
        assert_eq!(c.xs(), &[3.0, SENTINEL]);
        let t: Tensor<f32> = c.to_tensor();
        assert_eq!(t.data(), &[3.0, SENTINEL, 1.0, SENTINEL]);
    }

    #[test]
    fn color_texture_clamps() {
        let t = ColorTexture::from_planar(1, 1, vec![-0.5, 0.5, 2.0]).unwrap();
        assert_eq!(t.get(0, 0), [0.0, 0.5, 1.0]);
    }

    #[test]
    fn network_input_encodes_sentinel_and_mask() {
        let mut c = CoordMap::unknown(2, 1);
        c.set(0, 0, 9.0, 4.5);
        let t: Tensor<f64> = c.network_input((10, 10));
        assert_eq!(t.data(), &[1.0, -10.0, 0.5, -10.0, 1.0, 0.0]);
    }
}

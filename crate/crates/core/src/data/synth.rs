//! Procedural scenes: a textured body of revolution seen by an orthographic
//! camera in two rigid poses.
//!
//! The body rotates about the vertical image axis. A visible pixel at
//! horizontal offset `d` from the axis lies at angle `asin(d / R)` from the
//! view direction, so its texture coordinate is
//! `u = (θ + asin(d / R)) / 2π  (mod 1)` for a pose with rotation `θ`, and
//! `v` grows linearly from the top of the body to the bottom.
//!
//! With `mirror` textures `T(u, v) = T(1 − u, v)`. The source pose faces
//! `u = 1/4`, so its visible half is `u ∈ [0, 1/2]` and the hidden half is
//! the mirror image of what the camera sees.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::warp::{warp_texture, ColorTexture, CoordMap, Image, UvMap};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    #[default]
    Cylinder,
    /// Radius shrinks towards the top and bottom like an ellipse.
    Ellipsoid,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Stripes,
    Checker,
    Blobs,
    /// One of the above, chosen per scene.
    #[default]
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub image_width: usize,
    pub image_height: usize,
    pub texture_width: usize,
    pub texture_height: usize,
    pub surface: Surface,
    pub pattern: Pattern,
    pub mirror: bool,
    /// Range of the target rotation relative to the source, in degrees.
    pub min_rotation_deg: f64,
    pub max_rotation_deg: f64,
    /// Random offset of the source pose around `u = 1/4`, in degrees.
    pub source_jitter_deg: f64,
    /// Body radius as a fraction of the image width.
    pub min_radius: f64,
    pub max_radius: f64,
    /// Texture rows with `v` below this value form the identity patch.
    pub identity_band: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            image_width: 64,
            image_height: 64,
            texture_width: 64,
            texture_height: 64,
            surface: Surface::Cylinder,
            pattern: Pattern::Mixed,
            mirror: true,
            min_rotation_deg: 0.0,
            max_rotation_deg: 180.0,
            source_jitter_deg: 5.0,
            min_radius: 0.28,
            max_radius: 0.36,
            identity_band: 0.15,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::invalid("scene image size must be non-zero"));
        }
        if self.texture_width < 2 || self.texture_height < 2 {
            return Err(Error::invalid("scene texture must be at least 2x2"));
        }
        if !(self.min_rotation_deg <= self.max_rotation_deg) {
            return Err(Error::invalid("min_rotation_deg exceeds max_rotation_deg"));
        }
        if !(0.0 < self.min_radius && self.min_radius <= self.max_radius && self.max_radius <= 0.5) {
            return Err(Error::invalid("body radius fractions must satisfy 0 < min <= max <= 0.5"));
        }
        Ok(())
    }

    pub fn image_extent(&self) -> (usize, usize) {
        (self.image_width, self.image_height)
    }
}

/// Geometry of one body; poses differ only in rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Body {
    pub surface: Surface,
    pub center_x: f64,
    pub radius: f64,
    pub top: f64,
    pub bottom: f64,
}

impl Body {
    /// Fraction of the radius beyond which pixels are treated as background,
    /// avoiding grazing views where `u` changes unboundedly fast.
    const LIMB: f64 = 0.97;

    fn radius_at(&self, y: f64) -> f64 {
        match self.surface {
            Surface::Cylinder => self.radius,
            Surface::Ellipsoid => {
                let c = 0.5 * (self.top + self.bottom);
                let half = 0.5 * (self.bottom - self.top);
                let t = ((y - c) / half).clamp(-1.0, 1.0);
                self.radius * (1.0 - t * t).max(0.0).sqrt()
            }
        }
    }

    /// Analytic UV map of the body rotated by `theta` radians.
    pub fn render_uv(&self, width: usize, height: usize, theta: f64) -> UvMap {
        let mut m = UvMap::new(width, height);
        for y in 0..height {
            let yf = y as f64;
            if yf < self.top || yf > self.bottom {
                continue;
            }
            let r = self.radius_at(yf);
            if r <= 1.0 {
                continue;
            }
            let v = (yf - self.top) / (self.bottom - self.top);
            for x in 0..width {
                let d = (x as f64 - self.center_x) / r;
                if d.abs() > Self::LIMB {
                    continue;
                }
                let u = ((theta + d.asin()) / (2.0 * PI)).rem_euclid(1.0);
                m.set(x, y, u as f32, v as f32);
            }
        }
        m
    }
}

/// A source/target view pair with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    pub source: Image,
    pub source_uv: UvMap,
    pub target: Image,
    pub target_uv: UvMap,
    pub texture: ColorTexture,
    pub body: Body,
    /// Rotation of the target relative to the source, in degrees.
    pub rotation_deg: f64,
}

pub const BACKGROUND: [f32; 3] = [1.0, 1.0, 1.0];

/// Renders `texture` through `uv` onto a white background.
pub fn render(texture: &ColorTexture, uv: &UvMap) -> Image {
    let body = warp_texture(texture, uv);
    let mut img = Image::filled(uv.width(), uv.height(), BACKGROUND);
    for y in 0..uv.height() {
        for x in 0..uv.width() {
            if uv.is_valid(x, y) {
                img.set(x, y, body.get(x, y));
            }
        }
    }
    img
}

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    // keep away from the white background
    loop {
        let c = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
        if c.iter().sum::<f32>() < 2.3 {
            return c;
        }
    }
}

/// Procedural texture value at `(s, v)` with `s` the distance to the
/// mirror line in `u` units (`0 ≤ s ≤ 1/2` for mirrored textures).
enum PatternFn {
    Stripes { freq: f64, slope: f64, phase: f64, colors: [[f32; 3]; 3] },
    Checker { ku: f64, kv: f64, colors: [[f32; 3]; 2] },
    Blobs { centers: Vec<(f64, f64, f64, [f32; 3])>, base: [f32; 3] },
}

impl PatternFn {
    fn sample(rng: &mut ChaCha8Rng, kind: Pattern) -> Self {
        let kind = match kind {
            Pattern::Mixed => [Pattern::Stripes, Pattern::Checker, Pattern::Blobs][rng.gen_range(0..3)],
            k => k,
        };
        match kind {
            Pattern::Stripes => PatternFn::Stripes {
                freq: rng.gen_range(6.0..14.0),
                slope: rng.gen_range(-1.0..1.0),
                phase: rng.gen_range(0.0..1.0),
                colors: [random_color(rng), random_color(rng), random_color(rng)],
            },
            Pattern::Checker => PatternFn::Checker {
                ku: rng.gen_range(6.0..12.0),
                kv: rng.gen_range(4.0..9.0),
                colors: [random_color(rng), random_color(rng)],
            },
            Pattern::Blobs | Pattern::Mixed => {
                let n = rng.gen_range(4..9);
                PatternFn::Blobs {
                    centers: (0..n)
                        .map(|_| {
                            (
                                rng.gen_range(0.0..0.5),
                                rng.gen_range(0.0..1.0),
                                rng.gen_range(0.04..0.1),
                                random_color(rng),
                            )
                        })
                        .collect(),
                    base: random_color(rng),
                }
            }
        }
    }

    fn eval(&self, s: f64, v: f64) -> [f32; 3] {
        match self {
            PatternFn::Stripes { freq, slope, phase, colors } => {
                let t = (freq * (s + slope * v) + phase).rem_euclid(1.0);
                colors[((t * 3.0) as usize).min(2)]
            }
            PatternFn::Checker { ku, kv, colors } => {
                let p = (s * ku).floor() as i64 + (v * kv).floor() as i64;
                colors[p.rem_euclid(2) as usize]
            }
            PatternFn::Blobs { centers, base } => {
                let mut c = *base;
                for &(bs, bv, r, col) in centers {
                    let d2 = ((s - bs).powi(2) + (v - bv).powi(2)) / (r * r);
                    if d2 < 1.0 {
                        c = col;
                    }
                }
                c
            }
        }
    }
}

/// Full surface texture. The identity band carries its own pattern.
pub fn generate_texture(rng: &mut ChaCha8Rng, config: &SceneConfig) -> ColorTexture {
    let (tw, th) = (config.texture_width, config.texture_height);
    let body = PatternFn::sample(rng, config.pattern);
    let id_base = random_color(rng);
    let id_mark = random_color(rng);
    let id_pos = rng.gen_range(0.05..0.2);
    let plane = tw * th;
    let mut data = vec![0.0f32; 3 * plane];
    for j in 0..th {
        let v = j as f64 / (th - 1) as f64;
        for i in 0..tw {
            let u = i as f64 / (tw - 1) as f64;
            let s = if config.mirror { u.min(1.0 - u) } else { u };
            let c = if v < config.identity_band {
                if (s - id_pos).abs() < 0.06 {
                    id_mark
                } else {
                    id_base
                }
            } else {
                body.eval(s, v)
            };
            for ch in 0..3 {
                data[ch * plane + j * tw + i] = c[ch];
            }
        }
    }
    ColorTexture::from_planar(tw, th, data).expect("texture shape")
}

fn sample_body(rng: &mut ChaCha8Rng, config: &SceneConfig) -> Body {
    let w = config.image_width as f64;
    let h = config.image_height as f64;
    let radius = rng.gen_range(config.min_radius..=config.max_radius) * w;
    let center_x = 0.5 * (w - 1.0) + rng.gen_range(-0.03..=0.03) * w;
    let top = (rng.gen_range(0.06..0.12) * h).round();
    let bottom = ((1.0 - rng.gen_range(0.06..0.12)) * h).round().min(h - 1.0);
    let surface = config.surface;
    Body { surface, center_x, radius, top, bottom }
}

/// Rotation that puts the centre of `u = 1/4` in front of the camera.
pub const SOURCE_FACING: f64 = 0.5 * PI;

/// Deterministic scene pair for `seed`.
pub fn generate_pair(seed: u64, config: &SceneConfig) -> Result<ScenePair> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texture = generate_texture(&mut rng, config);
    let body = sample_body(&mut rng, config);
    let jitter = config.source_jitter_deg.to_radians() * rng.gen_range(-1.0..=1.0);
    let rotation_deg = if config.max_rotation_deg > config.min_rotation_deg {
        rng.gen_range(config.min_rotation_deg..=config.max_rotation_deg)
    } else {
        config.min_rotation_deg
    };
    let theta_s = SOURCE_FACING + jitter;
    let theta_n = theta_s + rotation_deg.to_radians();
    let (w, h) = config.image_extent();
    let source_uv = body.render_uv(w, h, theta_s);
    let target_uv = body.render_uv(w, h, theta_n);
    let source = render(&texture, &source_uv);
    let target = render(&texture, &target_uv);
    Ok(ScenePair { source, source_uv, target, target_uv, texture, body, rotation_deg })
}

/// Several views of one body, at the given rotations (degrees) relative
/// to the source-facing pose.
pub fn generate_views(seed: u64, config: &SceneConfig, rotations_deg: &[f64]) -> Result<(ColorTexture, Vec<(Image, UvMap)>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texture = generate_texture(&mut rng, config);
    let body = sample_body(&mut rng, config);
    let (w, h) = config.image_extent();
    let views = rotations_deg
        .iter()
        .map(|r| {
            let uv = body.render_uv(w, h, SOURCE_FACING + r.to_radians());
            (render(&texture, &uv), uv)
        })
        .collect();
    Ok((texture, views))
}

/// Pixels of `uv` whose surface point lies in the identity band.
pub fn identity_mask(uv: &UvMap, band: f64) -> Vec<bool> {
    uv.valid_mask()
        .iter()
        .zip(uv.raw_v())
        .map(|(&valid, &v)| valid && (v as f64) < band)
        .collect()
}

/// Texels in the identity band.
pub fn identity_texel_mask(tex_w: usize, tex_h: usize, band: f64) -> Vec<bool> {
    (0..tex_w * tex_h)
        .map(|k| ((k / tex_w) as f64 / (tex_h - 1) as f64) < band)
        .collect()
}

/// A smooth, fully known coordinate texture for the identity-completion
/// task: a random affine map of the texel grid with a mild bend, kept
/// inside the image.
pub fn smooth_coord_map(seed: u64, tex_w: usize, tex_h: usize, extent: (usize, usize)) -> CoordMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (extent.0 as f64 - 1.0, extent.1 as f64 - 1.0);
    let sx = rng.gen_range(0.4..0.8) * w;
    let sy = rng.gen_range(0.4..0.8) * h;
    let ox = rng.gen_range(0.0..(w - sx));
    let oy = rng.gen_range(0.0..(h - sy));
    let shear = rng.gen_range(-0.15..0.15);
    let bend = rng.gen_range(-0.08..0.08) * w;
    let phase = rng.gen_range(0.0..2.0 * PI);
    let mut c = CoordMap::unknown(tex_w, tex_h);
    for j in 0..tex_h {
        let b = j as f64 / (tex_h - 1) as f64;
        for i in 0..tex_w {
            let a = i as f64 / (tex_w - 1) as f64;
            let x = ox + sx * (a + shear * (b - 0.5)) + bend * (PI * b + phase).sin();
            let y = oy + sy * b;
            c.set(i, j, x.clamp(0.0, w) as f32, y.clamp(0.0, h) as f32);
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rotation_reproduces_source() {
        let cfg = SceneConfig {
            min_rotation_deg: 0.0,
            max_rotation_deg: 0.0,
            ..SceneConfig::default()
        };
        let p = generate_pair(7, &cfg).unwrap();
        assert_eq!(p.source_uv, p.target_uv);
        assert_eq!(p.source, p.target);
    }

    #[test]
    fn degenerate_config_errors() {
        let cfg = SceneConfig {
            image_width: 0,
            ..SceneConfig::default()
        };
        assert!(generate_pair(0, &cfg).is_err());
    }

    #[test]
    fn mirror_texture_is_symmetric() {
        let cfg = SceneConfig::default();
        let p = generate_pair(3, &cfg).unwrap();
        let t = &p.texture;
        for j in 0..t.height() {
            for i in 0..t.width() {
                assert_eq!(t.get(i, j), t.get(t.width() - 1 - i, j));
            }
        }
    }

    #[test]
    fn source_sees_front_half() {
        let cfg = SceneConfig {
            source_jitter_deg: 0.0,
            ..SceneConfig::default()
        };
        let p = generate_pair(11, &cfg).unwrap();
        for (&valid, &u) in p.source_uv.valid_mask().iter().zip(p.source_uv.raw_u()) {
            if valid {
                assert!((0.0..=0.5).contains(&u), "u = {u}");
            }
        }
        assert!(p.source_uv.valid_count() > 500);
    }
}

//! 8-bit RGB PNG input and output.

use std::path::Path;

use image::{ColorType, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::warp::Image;

/// Writes `img` as 8-bit RGB, rounding `v·255` after clamping to `[0, 1]`.
pub fn write_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let (w, h) = (img.width(), img.height());
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let c = img.get(x as usize, y as usize);
        image::Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    out.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Reads an 8-bit RGB PNG into `[0, 1]`.
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let dynimg = ImageReader::open(path)?.with_guessed_format()?.decode()?;
    if dynimg.color() != ColorType::Rgb8 {
        return Err(Error::Format(format!("expected 8-bit RGB PNG, got {:?}", dynimg.color())));
    }
    let rgb = dynimg.into_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut img = Image::filled(w, h, [0.0; 3]);
    for (x, y, p) in rgb.enumerate_pixels() {
        img.set(x as usize, y as usize, p.0.map(|v| v as f32 / 255.0));
    }
    Ok(img)
}

/// Rounds every channel to the nearest multiple of 1/255, as a PNG round
/// trip would.
pub fn quantize(img: &Image) -> Image {
    let data = img
        .planar()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
        .collect();
    Image::from_planar(img.width(), img.height(), data).expect("same shape")
}

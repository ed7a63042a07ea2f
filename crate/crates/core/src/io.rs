//! PNG import/export. Pixels are 8-bit on disk and `[0, 1]` floats in memory.

use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{invalid, Error, Result};
use crate::plane::{Image, ImagePlane};

/// Quantizes a float pixel to 8 bits, clamping to `[0, 1]` first.
#[inline]
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

fn planes_from_dynamic(img: DynamicImage, channels: usize) -> Result<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match channels {
        1 => {
            let g = img.into_luma8();
            let values = g.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
            Image::new(vec![ImagePlane::new(h, w, values)?])
        }
        3 => {
            let rgb = img.into_rgb8();
            let raw = rgb.as_raw();
            let planes = (0..3)
                .map(|c| ImagePlane::new(h, w, raw.iter().skip(c).step_by(3).map(|&b| b as f64 / 255.0).collect()))
                .collect::<Result<Vec<_>>>()?;
            Image::new(planes)
        }
        n => Err(invalid(format!("only 1 or 3 channels are supported, got {n}"))),
    }
}

/// Decodes a PNG (or any format the `image` crate was built with), converting
/// to `channels` channels and optionally resizing to `size = (height, width)`.
pub fn load_image(path: &Path, channels: usize, size: Option<(usize, usize)>) -> Result<Image> {
    let img = image::open(path).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    let img = match size {
        Some((h, w)) if (img.height() as usize, img.width() as usize) != (h, w) => {
            img.resize_exact(w as u32, h as u32, FilterType::Triangle)
        }
        _ => img,
    };
    planes_from_dynamic(img, channels)
}

/// Writes an 8-bit PNG. Values are clamped to `[0, 1]` here and nowhere else.
pub fn save_png(image: &Image, path: &Path) -> Result<()> {
    let (c, h, w) = image.shape();
    let result = match c {
        1 => {
            let buf: Vec<u8> = image.plane(0).values().iter().map(|&v| quantize(v)).collect();
            GrayImage::from_raw(w as u32, h as u32, buf)
                .expect("buffer sized from image")
                .save(path)
        }
        3 => {
            let mut buf = Vec::with_capacity(h * w * 3);
            for k in 0..h * w {
                for p in image.planes() {
                    buf.push(quantize(p.values()[k]));
                }
            }
            RgbImage::from_raw(w as u32, h as u32, buf)
                .expect("buffer sized from image")
                .save(path)
        }
        n => return Err(invalid(format!("cannot export a {n}-channel image as PNG"))),
    };
    result.map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })
}

/// Places images side by side, left to right. All must share a shape.
pub fn hstack(images: &[Image]) -> Result<Image> {
    let first = images.first().ok_or_else(|| invalid("nothing to stack"))?;
    for img in &images[1..] {
        first.check_same_shape(img)?;
    }
    let (c, h, w) = first.shape();
    let planes = (0..c)
        .map(|ch| ImagePlane::from_fn(h, w * images.len(), |r, col| images[col / w].plane(ch).get(r, col % w)))
        .collect::<Result<Vec<_>>>()?;
    Image::new(planes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_clamps() {
        assert_eq!(quantize(-0.3), 0);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(f64::NAN), 0);
    }

    #[test]
    fn png_round_trip_is_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(
            (0..3)
                .map(|c| ImagePlane::from_fn(5, 7, |r, k| ((r * 7 + k + c) % 11) as f64 / 10.0).unwrap())
                .collect(),
        )
        .unwrap();
        let path = dir.path().join("x.png");
        save_png(&img, &path).unwrap();
        let back = load_image(&path, 3, None).unwrap();
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn hstack_widths() {
        let a = Image::new(vec![ImagePlane::filled(2, 3, 0.0).unwrap()]).unwrap();
        let b = Image::new(vec![ImagePlane::filled(2, 3, 1.0).unwrap()]).unwrap();
        let s = hstack(&[a, b]).unwrap();
        assert_eq!(s.shape(), (1, 2, 6));
        assert_eq!(s.plane(0).get(1, 4), 1.0);
    }
}

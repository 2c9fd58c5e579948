//! PNG and PGM (binary P5) file I/O.
//!
//! Mask files are written as PGM P5 with 255 = ink, 0 = background.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use super::{to_gray, BinaryMask, GrayImage, RgbImage};
use crate::{Error, Result};

/// Load a PNG or PGM file as a grayscale image in `[0, 1]`.
///
/// Grayscale files map sample values directly; color files go through the
/// same luma conversion as [`to_gray`].
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let dynimg = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    match dynimg {
        DynamicImage::ImageLuma8(buf) => {
            let pixels = buf.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
            GrayImage::new(w, h, pixels)
        }
        DynamicImage::ImageLuma16(buf) => {
            let pixels = buf.into_raw().iter().map(|&v| v as f64 / 65535.0).collect();
            GrayImage::new(w, h, pixels)
        }
        other => {
            let rgb = other.to_rgb8();
            let data = rgb.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
            to_gray(&RgbImage::new(w, h, data)?)
        }
    }
}

/// Save a grayscale image as 8-bit PNG (values quantized with rounding).
pub fn save_gray_png(img: &GrayImage, path: &Path) -> Result<()> {
    let raw: Vec<u8> = img
        .pixels()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw)
            .expect("raw buffer matches image dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Save a binary mask as PGM P5, 255 = ink.
pub fn save_mask_pgm(mask: &BinaryMask, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!("P5\n{} {}\n255\n", mask.width(), mask.height());
    let body: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    w.write_all(header.as_bytes())
        .and_then(|_| w.write_all(&body))
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Load a PGM/PNG mask file. `ink_white` selects the file's convention:
/// `true` reads nonzero samples as ink, `false` reads zero samples as ink.
pub fn load_mask(path: &Path, ink_white: bool) -> Result<BinaryMask> {
    let img = load_gray(path)?;
    let bits = img
        .pixels()
        .iter()
        .map(|&v| if ink_white { v > 0.0 } else { v == 0.0 })
        .collect();
    BinaryMask::new(img.width(), img.height(), bits)
}

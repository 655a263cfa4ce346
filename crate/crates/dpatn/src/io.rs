//! PNG/PNM image and field IO.
//!
//! Images load at any bit depth and come back as `[0, 1]` reals; everything
//! is written as 16-bit so a saved field reloads within `0.5 / 65535`.

use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use dpatn_core::{ImageRgb, ScalarField};
use image::{DynamicImage, ImageBuffer, ImageError, ImageReader, Luma, Rgb};

use crate::error::{Error, Result};

/// Largest error a save/load cycle can introduce.
pub const QUANTIZATION_STEP: f64 = 1.0 / 65535.0;

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format().is_none() {
        return Err(Error::UnsupportedFormat { path: path.to_path_buf() });
    }
    reader.decode().map_err(|e| classify(path, e))
}

fn classify(path: &Path, e: ImageError) -> Error {
    match e {
        ImageError::Unsupported(_) => Error::UnsupportedFormat { path: path.to_path_buf() },
        ImageError::IoError(io) if io.kind() != ErrorKind::UnexpectedEof => Error::io(path, io),
        other => Error::Corrupt {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

#[inline]
fn to_unit(v: u16) -> f64 {
    f64::from(v) / 65535.0
}

#[inline]
fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn load_image(path: &Path) -> Result<ImageRgb> {
    let img = decode(path)?.to_rgb16();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = img.as_raw();
    Ok(ImageRgb::from_fn(h, w, |i, j| {
        let k = 3 * (i * w + j);
        [to_unit(raw[k]), to_unit(raw[k + 1]), to_unit(raw[k + 2])]
    }))
}

/// Loads a single-channel map; color inputs are reduced to luma.
pub fn load_field(path: &Path) -> Result<ScalarField> {
    let img = decode(path)?.to_luma16();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| to_unit(v)).collect();
    Ok(ScalarField::new(h as usize, w as usize, data)?)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn write(path: &Path, img: DynamicImage) -> Result<()> {
    ensure_parent(path)?;
    img.save(path).map_err(|e| match e {
        ImageError::Unsupported(_) => Error::UnsupportedFormat { path: path.to_path_buf() },
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::parse(path, other.to_string()),
    })
}

/// Writes a 16-bit RGB image; the format follows the extension.
pub fn save_image(path: &Path, image: &ImageRgb) -> Result<()> {
    let (h, w) = image.shape();
    let mut raw = Vec::with_capacity(3 * h * w);
    for i in 0..h {
        for j in 0..w {
            raw.extend(image.pixel(i, j).map(quantize));
        }
    }
    let buf = ImageBuffer::<Rgb<u16>, _>::from_raw(w as u32, h as u32, raw).expect("buffer sized from shape");
    write(path, DynamicImage::ImageRgb16(buf))
}

/// Writes a 16-bit grayscale field, clamped to `[0, 1]`.
pub fn save_field(path: &Path, field: &ScalarField) -> Result<()> {
    let (h, w) = field.shape();
    let raw = field.as_slice().iter().map(|&v| quantize(v)).collect();
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, raw).expect("buffer sized from shape");
    write(path, DynamicImage::ImageLuma16(buf))
}

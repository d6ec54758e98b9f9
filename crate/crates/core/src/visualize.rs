//! Byte-level visualization: raw binaries to grayscale rasters and
//! fixed-size network inputs.
//!
//! Every byte of the input file becomes one pixel, written row-major at
//! a width chosen from the file size (or overridden per call). The last
//! row is zero-padded, never truncated, so the raster is lossless up to
//! trailing padding.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::{Error, Result};

/// A raw binary file held in memory.
#[derive(Debug, Clone)]
pub struct RawBinary {
    pub bytes: Vec<u8>,
    /// Opaque provenance string (path or hash).
    pub source_id: String,
}

impl RawBinary {
    pub fn new(bytes: Vec<u8>, source_id: impl Into<String>) -> Self {
        RawBinary {
            bytes,
            source_id: source_id.into(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(RawBinary::new(bytes, path.display().to_string()))
    }

    pub fn size_bytes(&self) -> usize {
        self.bytes.len()
    }
}

/// Row-major 8-bit luminance raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayscaleImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    pub source_id: String,
}

impl GrayscaleImage {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<u8>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidWidth);
        }
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {}x{} image",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(GrayscaleImage {
            width,
            height,
            pixels,
            source_id: source_id.into(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

/// Channel-major input plane for a network, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInput {
    pub side: usize,
    pub channels: usize,
    /// `channels * side * side` values, channel-major.
    pub values: Vec<f32>,
}

/// Width convention for unconstrained conversions, keyed on file size.
/// Boundaries are half-open `[lo, hi)` with KB = 1024 bytes.
const WIDTH_TABLE: &[(usize, usize)] = &[
    (10, 32),
    (30, 64),
    (60, 128),
    (100, 256),
    (200, 384),
    (500, 512),
    (1000, 768),
];

/// Pick the raster width for a file of `size_bytes` bytes.
pub fn width_for_size(size_bytes: usize) -> usize {
    let kb = size_bytes as f64 / 1024.0;
    for &(hi, width) in WIDTH_TABLE {
        if kb < hi as f64 {
            return width;
        }
    }
    1024
}

/// Convert a binary to a grayscale raster, one byte per pixel.
///
/// The width comes from [`width_for_size`] unless overridden. The final
/// partial row, if any, is padded with zero bytes.
pub fn bytes_to_image(bin: &RawBinary, width_override: Option<usize>) -> Result<GrayscaleImage> {
    if bin.bytes.is_empty() {
        return Err(Error::EmptyBinary(bin.source_id.clone()));
    }
    let width = match width_override {
        Some(0) => return Err(Error::InvalidWidth),
        Some(w) => w,
        None => width_for_size(bin.bytes.len()),
    };
    let height = bin.bytes.len().div_ceil(width);
    let mut pixels = Vec::with_capacity(width * height);
    pixels.extend_from_slice(&bin.bytes);
    pixels.resize(width * height, 0);
    GrayscaleImage::new(width, height, pixels, bin.source_id.clone())
}

/// Bilinear sample of the raster at fractional coordinates, in f32.
/// Written in lerp form `a + t*(b - a)` so constant neighborhoods are
/// reproduced exactly.
fn bilinear_at(img: &GrayscaleImage, y: f32, x: f32) -> f32 {
    let (w, h) = (img.width, img.height);
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let dx = x - x0 as f32;
    let dy = y - y0 as f32;
    let p = |yy: usize, xx: usize| img.pixels[yy * w + xx] as f32;
    let top = p(y0, x0) + dx * (p(y0, x1) - p(y0, x0));
    let bot = p(y1, x0) + dx * (p(y1, x1) - p(y1, x0));
    top + dy * (bot - top)
}

/// Resize to `side x side` with corner-aligned bilinear sampling, scale
/// to `[0, 1]` and replicate across `channels` identical planes.
pub fn image_to_input(img: &GrayscaleImage, side: usize, channels: usize) -> Result<NetworkInput> {
    if side < 8 {
        return Err(Error::InputTooSmall(side));
    }
    assert!(
        channels == 1 || channels == 3,
        "channels must be 1 or 3, got {channels}"
    );
    let plane = resize_plane(img, side);
    let mut values = Vec::with_capacity(channels * side * side);
    for _ in 0..channels {
        values.extend_from_slice(&plane);
    }
    Ok(NetworkInput {
        side,
        channels,
        values,
    })
}

/// Resized single luminance plane in `[0, 1]`, row-major.
pub fn resize_plane(img: &GrayscaleImage, side: usize) -> Vec<f32> {
    let sy = if side > 1 {
        (img.height - 1) as f32 / (side - 1) as f32
    } else {
        0.0
    };
    let sx = if side > 1 {
        (img.width - 1) as f32 / (side - 1) as f32
    } else {
        0.0
    };
    let mut plane = Vec::with_capacity(side * side);
    for r in 0..side {
        let y = r as f32 * sy;
        for c in 0..side {
            let x = c as f32 * sx;
            plane.push(bilinear_at(img, y, x) / 255.0);
        }
    }
    plane
}

/// Write an 8-bit grayscale PNG. The encoder settings are fixed, no
/// ancillary time chunks are written, so identical images produce
/// byte-identical files.
pub fn write_image_png(img: &GrayscaleImage, path: &Path) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::UnsupportedImage(format!("encoding {}: {e}", path.display())))?;
    writer
        .write_image_data(&img.pixels)
        .map_err(|e| Error::UnsupportedImage(format!("encoding {}: {e}", path.display())))?;
    Ok(())
}

/// Read an 8-bit grayscale PNG written by [`write_image_png`] (or any
/// other producer of plain grayscale-8 PNGs).
pub fn read_image_png(path: &Path) -> Result<GrayscaleImage> {
    let file = File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let dec = png::Decoder::new(BufReader::new(file));
    let mut reader = dec
        .read_info()
        .map_err(|e| Error::UnsupportedImage(format!("{}: {e}", path.display())))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedImage(format!(
            "{}: expected 8-bit grayscale, found {:?}/{:?}",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    let mut buf = vec![
        0u8;
        reader
            .output_buffer_size()
            .ok_or_else(|| Error::UnsupportedImage(format!(
                "{}: image dimensions overflow",
                path.display()
            )))?
    ];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::UnsupportedImage(format!("{}: {e}", path.display())))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    buf.truncate(w * h);
    GrayscaleImage::new(w, h, buf, path.display().to_string())
}

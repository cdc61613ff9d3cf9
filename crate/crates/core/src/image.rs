//! Grayscale images, PGM / raw float I/O and basic statistics.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major grid of finite `f64` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| Error::InvalidParameter("image dimensions overflow".into()))?;
        if pixels.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: pixels.len(),
            });
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width.saturating_mul(height)])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Pixel count.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Swap rows and columns.
    pub fn transpose(&self) -> Image {
        let (w, h) = (self.width, self.height);
        let mut out = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                out[c * h + r] = self.pixels[r * w + c];
            }
        }
        Image {
            width: h,
            height: w,
            pixels: out,
        }
    }

    /// Build an image of the same shape from new pixel values.
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<Image> {
        Image::new(self.width, self.height, pixels)
    }
}

/// On-disk pixel encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    /// Binary PGM (P5), one byte per sample.
    Pgm8,
    /// Binary PGM (P5), two big-endian bytes per sample.
    Pgm16,
    /// Headerless little-endian `f32`, row-major. Dimensions travel separately.
    Raw32,
}

impl ImageFormat {
    pub fn name(self) -> &'static str {
        match self {
            ImageFormat::Pgm8 => "pgm8",
            ImageFormat::Pgm16 => "pgm16",
            ImageFormat::Raw32 => "raw32",
        }
    }

    fn maxval(self) -> Option<u32> {
        match self {
            ImageFormat::Pgm8 => Some(255),
            ImageFormat::Pgm16 => Some(65535),
            ImageFormat::Raw32 => None,
        }
    }
}

/// Load an image. PGM files are decoded according to their own header (the
/// sample width follows maxval), so `Pgm8` and `Pgm16` read either depth.
/// `dims` is required for `Raw32` and ignored otherwise.
pub fn load_image(path: &Path, format: ImageFormat, dims: Option<(usize, usize)>) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        ImageFormat::Pgm8 | ImageFormat::Pgm16 => decode_pgm(&bytes),
        ImageFormat::Raw32 => {
            let (w, h) = dims.ok_or_else(|| {
                Error::InvalidParameter("raw32 input requires width and height".into())
            })?;
            decode_raw32(&bytes, w, h)
        }
    }
}

/// Depth of an existing PGM file, read from its header.
pub fn pgm_format_of(path: &Path) -> Result<ImageFormat> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    if next_token(&bytes, &mut pos)? != b"P5" {
        return Err(Error::Format("expected P5 magic".into()));
    }
    parse_header_number(&bytes, &mut pos, "width")?;
    parse_header_number(&bytes, &mut pos, "height")?;
    let maxval = parse_header_number(&bytes, &mut pos, "maxval")?;
    Ok(if maxval > 255 {
        ImageFormat::Pgm16
    } else {
        ImageFormat::Pgm8
    })
}

/// Save an image. PGM output rounds to nearest and clamps into `[0, maxval]`.
pub fn save_image(img: &Image, path: &Path, format: ImageFormat) -> Result<()> {
    let bytes = match format {
        ImageFormat::Pgm8 | ImageFormat::Pgm16 => encode_pgm(img, format.maxval().unwrap_or(255)),
        ImageFormat::Raw32 => encode_raw32(img)?,
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn encode_pgm(img: &Image, maxval: u32) -> Vec<u8> {
    let wide = maxval > 255;
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, maxval).into_bytes();
    out.reserve(img.len() * if wide { 2 } else { 1 });
    for &v in &img.pixels {
        let q = v.round().clamp(0.0, maxval as f64) as u32;
        if wide {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}

fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::Format(format!(
            "expected P5 magic, found {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = parse_header_number(bytes, &mut pos, "width")?;
    let height = parse_header_number(bytes, &mut pos, "height")?;
    let maxval = parse_header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing whitespace after maxval".into())),
    }
    let n = width * height;
    let sample = if maxval > 255 { 2 } else { 1 };
    let raster = &bytes[pos..];
    if raster.len() < n * sample {
        return Err(Error::SizeMismatch {
            expected: n * sample,
            found: raster.len(),
        });
    }
    let pixels = if sample == 1 {
        raster[..n].iter().map(|&b| b as f64).collect()
    } else {
        raster[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    };
    Image::new(width, height, pixels)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad {what} field")))
}

fn encode_raw32(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(img.len() * 4);
    for (i, &v) in img.pixels.iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::NonFinite(i));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

fn decode_raw32(bytes: &[u8], width: usize, height: usize) -> Result<Image> {
    let expected = 4 * width * height;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let pixels = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Image::new(width, height, pixels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImageStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn image_stats(img: &Image) -> ImageStats {
    let n = img.len() as f64;
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in img.pixels() {
        min = min.min(v);
        max = max.max(v);
    }
    let mean = img.pixels().iter().sum::<f64>() / n;
    let var = img
        .pixels()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    ImageStats {
        min,
        max,
        mean,
        std: var.sqrt(),
    }
}

//! RGB8 image buffers and binary masks, with PNG encoding.

use std::io::Cursor;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub type Rgb = [u8; 3];

/// Side length of the default session canvas.
pub const DEFAULT_CANVAS: u32 = 512;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("png decode failed: {0}")]
    Decode(String),
    #[error("png encode failed: {0}")]
    Encode(String),
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Width and height of a raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub width: u32,
    pub height: u32,
}

impl Dims {
    pub const fn new(width: u32, height: u32) -> Self {
        Dims { width, height }
    }

    pub const fn square(side: u32) -> Self {
        Dims::new(side, side)
    }

    pub fn area(self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64
    }

    fn index(self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }
}

impl Default for Dims {
    fn default() -> Self {
        Dims::square(DEFAULT_CANVAS)
    }
}

pub(crate) fn check_dims(a: Dims, b: Dims) -> Result<(), ImageError> {
    if a == b {
        Ok(())
    } else {
        Err(ImageError::DimensionMismatch(a.width, a.height, b.width, b.height))
    }
}

/// Row-major RGB8 raster with an optional per-pixel validity plane.
///
/// Invalid pixels mean "no content here" (warped foreground outside the
/// moved region). Black is a legal color and never doubles as that marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    dims: Dims,
    pixels: Vec<Rgb>,
    valid: Option<Vec<bool>>,
}

impl ImageBuffer {
    pub fn filled(dims: Dims, color: Rgb) -> Self {
        ImageBuffer {
            dims,
            pixels: vec![color; dims.area()],
            valid: None,
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(u32, u32) -> Rgb) -> Self {
        let mut pixels = Vec::with_capacity(dims.area());
        for y in 0..dims.height {
            for x in 0..dims.width {
                pixels.push(f(x, y));
            }
        }
        ImageBuffer {
            dims,
            pixels,
            valid: None,
        }
    }

    pub fn from_pixels(dims: Dims, pixels: Vec<Rgb>) -> Result<Self, ImageError> {
        if pixels.len() != dims.area() {
            return Err(ImageError::Decode(format!(
                "expected {} pixels, got {}",
                dims.area(),
                pixels.len()
            )));
        }
        Ok(ImageBuffer {
            dims,
            pixels,
            valid: None,
        })
    }

    /// An image with every pixel unset.
    pub fn empty(dims: Dims) -> Self {
        ImageBuffer {
            dims,
            pixels: vec![[0, 0, 0]; dims.area()],
            valid: Some(vec![false; dims.area()]),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> u32 {
        self.dims.width
    }

    pub fn height(&self) -> u32 {
        self.dims.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.pixels[self.dims.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, c: Rgb) {
        let i = self.dims.index(x, y);
        self.pixels[i] = c;
        if let Some(v) = &mut self.valid {
            v[i] = true;
        }
    }

    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.is_valid_at(self.dims.index(x, y))
    }

    pub(crate) fn is_valid_at(&self, i: usize) -> bool {
        self.valid.as_ref().is_none_or(|v| v[i])
    }

    pub fn fully_valid(&self) -> bool {
        self.valid.as_ref().is_none_or(|v| v.iter().all(|&b| b))
    }

    pub fn valid_count(&self) -> usize {
        self.valid
            .as_ref()
            .map_or(self.dims.area(), |v| v.iter().filter(|&&b| b).count())
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    /// Stable content id: SHA-256 over dimensions and RGB bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.dims.width.to_le_bytes());
        h.update(self.dims.height.to_le_bytes());
        for p in &self.pixels {
            h.update(p);
        }
        hex::encode(h.finalize())
    }

    /// Encode as RGB8 PNG, or RGBA8 with zero alpha on invalid pixels.
    pub fn to_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, self.dims.width, self.dims.height);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        let data: Vec<u8> = match &self.valid {
            None => {
                enc.set_color(png::ColorType::Rgb);
                self.pixels.iter().flatten().copied().collect()
            }
            Some(valid) => {
                enc.set_color(png::ColorType::Rgba);
                self.pixels
                    .iter()
                    .zip(valid)
                    .flat_map(|(p, &v)| [p[0], p[1], p[2], if v { 255 } else { 0 }])
                    .collect()
            }
        };
        let mut writer = enc.write_header().map_err(|e| ImageError::Encode(e.to_string()))?;
        writer
            .write_image_data(&data)
            .map_err(|e| ImageError::Encode(e.to_string()))?;
        writer.finish().map_err(|e| ImageError::Encode(e.to_string()))?;
        Ok(out)
    }

    /// Decode any 8/16-bit gray, gray-alpha, RGB, RGBA or palette PNG.
    /// Alpha is discarded; the result is fully valid.
    pub fn from_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let (dims, channels, data) = decode_png(bytes)?;
        let pixels = data
            .chunks_exact(channels)
            .map(|c| match channels {
                1 | 2 => [c[0], c[0], c[0]],
                _ => [c[0], c[1], c[2]],
            })
            .collect();
        ImageBuffer::from_pixels(dims, pixels)
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        ImageBuffer::from_png(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        std::fs::write(path, self.to_png()?)?;
        Ok(())
    }
}

fn decode_png(bytes: &[u8]) -> Result<(Dims, usize, Vec<u8>), ImageError> {
    let err = |e: png::DecodingError| ImageError::Decode(e.to_string());
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Decode("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(err)?;
    buf.truncate(info.buffer_size());
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(ImageError::Decode("unexpanded palette image".into())),
    };
    Ok((Dims::new(info.width, info.height), channels, buf))
}

/// Binary per-pixel occupancy, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RasterMask {
    dims: Dims,
    bits: Vec<bool>,
}

impl RasterMask {
    pub fn new(dims: Dims) -> Self {
        RasterMask {
            dims,
            bits: vec![false; dims.area()],
        }
    }

    pub fn full(dims: Dims) -> Self {
        RasterMask {
            dims,
            bits: vec![true; dims.area()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(dims.area());
        for y in 0..dims.height {
            for x in 0..dims.width {
                bits.push(f(x, y));
            }
        }
        RasterMask { dims, bits }
    }

    pub fn from_bits(dims: Dims, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == dims.area()).then_some(RasterMask { dims, bits })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> u32 {
        self.dims.width
    }

    pub fn height(&self) -> u32 {
        self.dims.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.dims.index(x, y)]
    }

    /// Out-of-canvas coordinates read as unset.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        self.dims.contains(x, y) && self.get(x as u32, y as u32)
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        let i = self.dims.index(x, y);
        self.bits[i] = on;
    }

    pub fn population(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn complement(&self) -> RasterMask {
        RasterMask {
            dims: self.dims,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// `self \ other`.
    pub fn difference(&self, other: &RasterMask) -> Result<RasterMask, ImageError> {
        check_dims(self.dims, other.dims)?;
        Ok(RasterMask {
            dims: self.dims,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && !b).collect(),
        })
    }

    pub fn intersection(&self, other: &RasterMask) -> Result<RasterMask, ImageError> {
        check_dims(self.dims, other.dims)?;
        Ok(RasterMask {
            dims: self.dims,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        })
    }

    pub fn is_subset_of(&self, other: &RasterMask) -> bool {
        self.dims == other.dims && self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }

    /// Tight integer bounds `[x0, x1) x [y0, y1)` of the set pixels.
    pub fn bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let mut acc: Option<(u32, u32, u32, u32)> = None;
        for y in 0..self.dims.height {
            for x in 0..self.dims.width {
                if self.get(x, y) {
                    acc = Some(match acc {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
        acc
    }

    /// Encode as a 1-bit grayscale PNG (set = white).
    pub fn to_png(&self) -> Result<Vec<u8>, ImageError> {
        let w = self.dims.width as usize;
        let stride = w.div_ceil(8);
        let mut data = vec![0u8; stride * self.dims.height as usize];
        for (y, row) in self.bits.chunks(w.max(1)).enumerate() {
            for (x, &b) in row.iter().enumerate() {
                if b {
                    data[y * stride + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, self.dims.width, self.dims.height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        enc.set_compression(png::Compression::Fast);
        let mut writer = enc.write_header().map_err(|e| ImageError::Encode(e.to_string()))?;
        writer
            .write_image_data(&data)
            .map_err(|e| ImageError::Encode(e.to_string()))?;
        writer.finish().map_err(|e| ImageError::Encode(e.to_string()))?;
        Ok(out)
    }

    /// Decode any PNG; a pixel is set when its first channel is >= 128.
    pub fn from_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let (dims, channels, data) = decode_png(bytes)?;
        let bits = data.chunks_exact(channels).map(|c| c[0] >= 128).collect();
        Ok(RasterMask { dims, bits })
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        RasterMask::from_png(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        std::fs::write(path, self.to_png()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn png_roundtrip_rgb() {
        let img = ImageBuffer::from_fn(Dims::new(7, 5), |x, y| [x as u8 * 30, y as u8 * 40, 9]);
        let back = ImageBuffer::from_png(&img.to_png().unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn partial_image_encodes_alpha() {
        let mut img = ImageBuffer::empty(Dims::new(3, 1));
        img.set(1, 0, [5, 6, 7]);
        assert_eq!(img.valid_count(), 1);
        let back = ImageBuffer::from_png(&img.to_png().unwrap()).unwrap();
        assert!(back.fully_valid());
        assert_eq!(back.get(1, 0), [5, 6, 7]);
    }

    #[test]
    fn corrupt_png_is_decode_error() {
        assert!(matches!(
            ImageBuffer::from_png(b"\x89PNG garbage"),
            Err(ImageError::Decode(_))
        ));
    }

    #[test]
    fn mask_bounds() {
        let mut m = RasterMask::new(Dims::new(10, 10));
        assert_eq!(m.bounds(), None);
        m.set(2, 3, true);
        m.set(6, 4, true);
        assert_eq!(m.bounds(), Some((2, 3, 7, 5)));
    }

    proptest! {
        #[test]
        fn mask_png_roundtrip(w in 1u32..40, h in 1u32..20, seed in any::<u64>()) {
            let m = RasterMask::from_fn(Dims::new(w, h), |x, y| {
                (seed >> ((x * 7 + y * 13) % 64)) & 1 == 1
            });
            let bytes = m.to_png().unwrap();
            let back = RasterMask::from_png(&bytes).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.to_png().unwrap(), bytes);
        }
    }
}

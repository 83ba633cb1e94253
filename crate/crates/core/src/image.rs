//! Single-channel raster shared by every operator.

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{OpError, OpResult};

/// Foreground sample value of a binary buffer.
pub const FG: f64 = 255.0;
/// Background sample value of a binary buffer.
pub const BG: f64 = 0.0;

/// Soft-tissue window (width, level) in HU.
pub const SOFT_TISSUE_WINDOW: (f64, f64) = (400.0, 40.0);
/// Bone window (width, level) in HU.
pub const BONE_WINDOW: (f64, f64) = (1500.0, 300.0);

/// What the samples of a buffer mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    /// Calibrated Hounsfield units.
    Hu,
    /// Display domain, 0..=255.
    Unit,
    /// Mask with samples in {0, 255}.
    Binary,
}

impl Kind {
    fn tag(self) -> u8 {
        match self {
            Kind::Hu => 0,
            Kind::Unit => 1,
            Kind::Binary => 2,
        }
    }
}

/// Row-major single-channel raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    kind: Kind,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, kind: Kind, data: Vec<f64>) -> OpResult<Self> {
        if data.len() != width * height {
            return Err(OpError::DimMismatch(format!(
                "{} samples for a {width}x{height} buffer",
                data.len()
            )));
        }
        if kind == Kind::Binary && data.iter().any(|&v| v != FG && v != BG) {
            return Err(OpError::NotBinary);
        }
        Ok(Self {
            width,
            height,
            kind,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, kind: Kind, value: f64) -> Self {
        Self {
            width,
            height,
            kind,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        kind: Kind,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            kind,
            data,
        }
    }

    /// Binary mask from a predicate over pixel coordinates.
    pub fn mask_from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self::from_fn(width, height, Kind::Binary, |x, y| if f(x, y) { FG } else { BG })
    }

    pub fn empty_mask(width: usize, height: usize) -> Self {
        Self::filled(width, height, Kind::Binary, BG)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        let w = self.width;
        self.data[y * w + x] = v;
    }

    /// Sample with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    #[inline]
    pub fn is_fg(&self, x: usize, y: usize) -> bool {
        self.get(x, y) != BG
    }

    pub fn in_bounds(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Same raster with a different kind tag. Binary retagging validates samples.
    pub fn with_kind(self, kind: Kind) -> OpResult<Self> {
        Self::new(self.width, self.height, kind, self.data)
    }

    pub fn map(&self, kind: Kind, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            kind,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> OpResult<()> {
        if self.dims() != other.dims() {
            return Err(OpError::DimMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn require_binary(&self) -> OpResult<()> {
        if self.kind != Kind::Binary {
            return Err(OpError::NotBinary);
        }
        Ok(())
    }

    pub fn count_fg(&self) -> usize {
        self.data.iter().filter(|&&v| v != BG).count()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Content digest over kind, dimensions and raw sample bytes (hex, 128 bits).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update([self.kind.tag()]);
        h.update((self.width as u64).to_le_bytes());
        h.update((self.height as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..16])
    }

    /// Map HU to the 0..=255 display domain with a window/level pair.
    pub fn window_level(&self, width: f64, level: f64) -> OpResult<ImageBuffer> {
        if !(width > 0.0) {
            return Err(OpError::BadParam(format!("window width {width} must be > 0")));
        }
        let lo = level - width / 2.0;
        Ok(self.map(Kind::Unit, |v| ((v - lo) / width).clamp(0.0, 1.0) * 255.0))
    }

    /// Quantize to 8-bit samples (round, clamp). HU buffers are not windowed here.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    /// PNG encoding of the 8-bit quantized samples.
    pub fn to_png(&self) -> Vec<u8> {
        encode_png(self.width as u32, self.height as u32, image::ExtendedColorType::L8, &self.to_u8())
    }

    /// Raw serialization used by the on-disk cache: header then little-endian f64 samples.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.data.len() * 8);
        out.extend_from_slice(b"FSIB");
        out.push(self.kind.tag());
        out.extend_from_slice(&[0, 0, 0]);
        out.extend_from_slice(&(self.width as u64).to_le_bytes());
        out.extend_from_slice(&(self.height as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<ImageBuffer> {
        if bytes.len() < 24 || &bytes[..4] != b"FSIB" {
            return None;
        }
        let kind = match bytes[4] {
            0 => Kind::Hu,
            1 => Kind::Unit,
            2 => Kind::Binary,
            _ => return None,
        };
        let width = u64::from_le_bytes(bytes[8..16].try_into().ok()?) as usize;
        let height = u64::from_le_bytes(bytes[16..24].try_into().ok()?) as usize;
        let body = &bytes[24..];
        if body.len() != width.checked_mul(height)?.checked_mul(8)? {
            return None;
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ImageBuffer::new(width, height, kind, data).ok()
    }
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// 8-bit RGB raster used for overlays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl RgbImage {
    /// Gray base from a display-domain buffer.
    pub fn from_gray(img: &ImageBuffer) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.data().iter().map(|&v| [quantize(v); 3]).collect(),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, px: [u8; 3]) {
        self.data[y * self.width + x] = px;
    }

    pub fn to_png(&self) -> Vec<u8> {
        let flat: Vec<u8> = self.data.iter().flatten().copied().collect();
        encode_png(self.width as u32, self.height as u32, image::ExtendedColorType::Rgb8, &flat)
    }
}

fn encode_png(w: u32, h: u32, color: image::ExtendedColorType, buf: &[u8]) -> Vec<u8> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(buf, w, h, color)
        .expect("in-memory PNG encoding of a well-sized buffer");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(matches!(
            ImageBuffer::new(2, 2, Kind::Unit, vec![0.0; 3]),
            Err(OpError::DimMismatch(_))
        ));
    }

    #[test]
    fn binary_must_be_two_valued() {
        assert_eq!(
            ImageBuffer::new(1, 2, Kind::Binary, vec![0.0, 1.0]),
            Err(OpError::NotBinary)
        );
        assert!(ImageBuffer::new(1, 2, Kind::Binary, vec![0.0, 255.0]).is_ok());
    }

    #[test]
    fn digest_depends_on_kind_and_dims() {
        let a = ImageBuffer::filled(2, 3, Kind::Unit, 0.0);
        let b = ImageBuffer::filled(3, 2, Kind::Unit, 0.0);
        let c = ImageBuffer::filled(2, 3, Kind::Binary, 0.0);
        assert_ne!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest(), a.clone().digest());
        assert_eq!(a.digest().len(), 32);
    }

    #[test]
    fn window_level_maps_edges() {
        let img = ImageBuffer::new(3, 1, Kind::Hu, vec![-1000.0, 40.0, 2000.0]).unwrap();
        let (w, l) = SOFT_TISSUE_WINDOW;
        let out = img.window_level(w, l).unwrap();
        assert_eq!(out.data(), &[0.0, 127.5, 255.0]);
        assert_eq!(out.kind(), Kind::Unit);
    }

    #[test]
    fn bytes_roundtrip() {
        let img = ImageBuffer::from_fn(4, 3, Kind::Hu, |x, y| x as f64 * 0.5 - y as f64);
        assert_eq!(ImageBuffer::from_bytes(&img.to_bytes()), Some(img));
        assert_eq!(ImageBuffer::from_bytes(b"FSIB"), None);
    }

    #[test]
    fn png_has_signature() {
        let png = ImageBuffer::filled(4, 4, Kind::Unit, 12.0).to_png();
        assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    }
}

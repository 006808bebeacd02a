//! Raster types: planar float images for the model, binary bitmaps for masks,
//! and lossless PNG helpers for everything that touches disk.

use std::fs;
use std::io;
use std::path::Path;

use image::{GrayImage, Luma, RgbImage};
use sha2::{Digest, Sha256};

use crate::scalar::Scalar;

/// Planar (channel, row, column) float image. Model-facing values live in
/// `[-1, 1]`; 8-bit conversion happens only at the edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<F> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Image<F> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, F::zero())
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: F) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), channels * height * width, "image buffer size");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> F {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: F) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[F] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [F] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Stack channels of `self` followed by `other`.
    pub fn concat_channels(&self, other: &Self) -> Self {
        assert_eq!((self.height, self.width), (other.height, other.width));
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Self::from_vec(self.channels + other.channels, self.height, self.width, data)
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn clamp_unit(&mut self) {
        let one = F::one();
        for v in &mut self.data {
            *v = v.max(-one).min(one);
        }
    }

    /// 8-bit RGB to `[-1, 1]`; `v / 127.5 - 1` round-trips exactly through [`Image::to_rgb8`].
    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Self::zeros(3, h, w);
        let scale = F::lit(127.5);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, F::lit(px.0[c] as f64) / scale - F::one());
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> RgbImage {
        assert_eq!(self.channels, 3, "to_rgb8 needs three channels");
        let mut out = RgbImage::new(self.width as u32, self.height as u32);
        for (x, y, px) in out.enumerate_pixels_mut() {
            for c in 0..3 {
                px.0[c] = unit_to_u8(self.at(c, y as usize, x as usize));
            }
        }
        out
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.at(c, y, self.width - 1 - x));
                }
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> Self {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.at(c, self.height - 1 - y, x));
                }
            }
        }
        out
    }
}

#[inline]
pub fn unit_to_u8<F: Scalar>(v: F) -> u8 {
    let v = (v.as_f64() + 1.0) * 127.5;
    v.round().clamp(0.0, 255.0) as u8
}

/// Binary raster; `true` marks a manipulated / generated pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bitmap {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn none_set(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn union(&self, other: &Self) -> Self {
        assert_eq!((self.width, self.height), (other.width, other.height));
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn intersection_count(&self, other: &Self) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.intersection_count(other);
        let union = self.bits.iter().zip(&other.bits).filter(|(a, b)| **a || **b).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Square (Chebyshev) dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        // separable: rows then columns
        let mut rows = Self::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let lo = x.saturating_sub(radius);
                let hi = (x + radius).min(w - 1);
                rows.set(x, y, (lo..=hi).any(|xx| self.get(xx, y)));
            }
        }
        let mut out = Self::new(w, h);
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(h - 1);
            for x in 0..w {
                out.set(x, y, (lo..=hi).any(|yy| rows.get(x, yy)));
            }
        }
        out
    }

    /// 255 = set, 0 = clear.
    pub fn to_gray(&self) -> GrayImage {
        let mut img = GrayImage::new(self.width as u32, self.height as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            *px = Luma([if self.get(x as usize, y as usize) { 255 } else { 0 }]);
        }
        img
    }

    /// Any nonzero pixel counts as set.
    pub fn from_gray(img: &GrayImage) -> Self {
        let mut out = Self::new(img.width() as usize, img.height() as usize);
        for (x, y, px) in img.enumerate_pixels() {
            out.set(x as usize, y as usize, px.0[0] > 127);
        }
        out
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_png_rgb(img: &RgbImage) -> Vec<u8> {
    let mut buf = io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    buf.into_inner()
}

pub fn encode_png_gray(img: &GrayImage) -> Vec<u8> {
    let mut buf = io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    buf.into_inner()
}

pub fn decode_png_rgb(bytes: &[u8]) -> Result<RgbImage, image::ImageError> {
    Ok(image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8())
}

pub fn decode_png_gray(bytes: &[u8]) -> Result<GrayImage, image::ImageError> {
    Ok(image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_luma8())
}

/// Write to a sibling temp file and rename over `path`, so readers never see
/// a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn save_rgb_png(path: &Path, img: &RgbImage) -> io::Result<()> {
    write_atomic(path, &encode_png_rgb(img))
}

pub fn save_mask_png(path: &Path, mask: &Bitmap) -> io::Result<()> {
    write_atomic(path, &encode_png_gray(&mask.to_gray()))
}

pub fn load_rgb_png(path: &Path) -> io::Result<RgbImage> {
    let bytes = fs::read(path)?;
    decode_png_rgb(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

pub fn load_mask_png(path: &Path) -> io::Result<Bitmap> {
    let bytes = fs::read(path)?;
    decode_png_gray(&bytes)
        .map(|g| Bitmap::from_gray(&g))
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Rec. 601 luma of an 8-bit pixel, in `[0, 255]`.
#[inline]
pub fn luma(px: &image::Rgb<u8>) -> f64 {
    0.299 * px.0[0] as f64 + 0.587 * px.0[1] as f64 + 0.114 * px.0[2] as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rgb8_roundtrip_is_exact() {
        let mut img = RgbImage::new(4, 3);
        for (i, px) in img.pixels_mut().enumerate() {
            *px = image::Rgb([(i * 20) as u8, (255 - i * 7) as u8, (i * 13 % 256) as u8]);
        }
        assert_eq!(Image::<f32>::from_rgb8(&img).to_rgb8(), img);
        assert_eq!(Image::<f64>::from_rgb8(&img).to_rgb8(), img);
    }

    #[test]
    fn dilating_a_square_grows_each_side_by_radius() {
        let mut m = Bitmap::new(40, 40);
        for y in 10..20 {
            for x in 10..20 {
                m.set(x, y, true);
            }
        }
        let d = m.dilate(4);
        assert_eq!(d.count(), 18 * 18);
        assert!(d.get(6, 6) && d.get(23, 23) && !d.get(5, 6) && !d.get(24, 23));
    }

    proptest! {
        #[test]
        fn mask_png_roundtrip(bits in proptest::collection::vec(any::<bool>(), 12 * 7)) {
            let m = Bitmap { width: 12, height: 7, bits };
            let bytes = encode_png_gray(&m.to_gray());
            let back = Bitmap::from_gray(&decode_png_gray(&bytes).unwrap());
            prop_assert_eq!(back, m);
        }
    }
}

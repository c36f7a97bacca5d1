//! Raster images as the universal currency of generators and discriminators.
//!
//! Pixels are stored channel-first (C, H, W) as `f32` in `[-1, 1]`. 8-bit
//! rasters map linearly onto that range at load time and back on save.

use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// A real-valued raster in `[-1, 1]`, stored as (channels, height, width).
///
/// Network inputs additionally need height and width divisible by 4 (the
/// generator downsamples twice); that is checked at the network boundary,
/// not here, so that arbitrarily sized source photos can be loaded and
/// cropped into shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f32>,
}

impl Image {
    /// Wraps raw data, rejecting values outside `[-1, 1]` or non-finite ones.
    pub fn new(data: Array3<f32>) -> Result<Self> {
        for &v in data.iter() {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(Error::InvalidImage(format!(
                    "pixel value {v} outside [-1, 1]"
                )));
            }
        }
        Ok(Image { data })
    }

    /// Wraps data that is in range by construction (e.g. a tanh output).
    pub(crate) fn from_bounded(data: Array3<f32>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
        Image { data }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image {
            data: Array3::zeros((channels, height, width)),
        }
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Image::new(Array3::from_elem((channels, height, width), value))
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.data.dim() == other.data.dim()
    }

    /// Mirrors the image along the horizontal axis (left-right flip).
    pub fn mirror_h(&self) -> Image {
        let (c, h, w) = self.data.dim();
        let mut out = Array3::zeros((c, h, w));
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[[ci, y, x]] = self.data[[ci, y, w - 1 - x]];
                }
            }
        }
        Image { data: out }
    }

    /// Converts 8-bit RGB data into the `[-1, 1]` range.
    pub fn from_rgb8(width: u32, height: u32, raw: &[u8]) -> Result<Self> {
        let (w, h) = (width as usize, height as usize);
        if raw.len() != w * h * 3 {
            return Err(Error::InvalidImage(format!(
                "raw buffer length {} does not match {w}x{h} RGB",
                raw.len()
            )));
        }
        let mut data = Array3::zeros((3, h, w));
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = raw[(y * w + x) * 3 + c] as f32 / 127.5 - 1.0;
                    data[[c, y, x]] = v;
                }
            }
        }
        Ok(Image { data })
    }

    /// Quantizes to 8-bit RGB, the inverse of [`Image::from_rgb8`].
    pub fn to_rgb8(&self) -> Result<Vec<u8>> {
        if self.channels() != 3 {
            return Err(Error::InvalidImage(format!(
                "expected 3 channels for RGB export, got {}",
                self.channels()
            )));
        }
        let (h, w) = (self.height(), self.width());
        let mut raw = vec![0u8; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = ((self.data[[c, y, x]] + 1.0) * 127.5).round().clamp(0.0, 255.0);
                    raw[(y * w + x) * 3 + c] = v as u8;
                }
            }
        }
        Ok(raw)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Image::from_rgb8(img.width(), img.height(), img.as_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw = self.to_rgb8()?;
        let buf = image::RgbImage::from_raw(self.width() as u32, self.height() as u32, raw)
            .expect("raw buffer sized from image dimensions");
        buf.save(path)?;
        Ok(())
    }
}

/// Bilinear resize. Degenerates to an exact copy when sizes already match,
/// so the identity augmentation path is bit-exact.
pub fn resize_bilinear(src: &Image, out_h: usize, out_w: usize) -> Image {
    if src.height() == out_h && src.width() == out_w {
        return src.clone();
    }
    let (c, h, w) = src.data().dim();
    let mut out = Array3::zeros((c, out_h, out_w));
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for oy in 0..out_h {
        // Pixel-center alignment.
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = (fy - y0 as f64) as f32;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = (fx - x0 as f64) as f32;
            for ci in 0..c {
                let a = src.data()[[ci, y0, x0]];
                let b = src.data()[[ci, y0, x1]];
                let d = src.data()[[ci, y1, x0]];
                let e = src.data()[[ci, y1, x1]];
                let top = a + (b - a) * wx;
                let bot = d + (e - d) * wx;
                out[[ci, oy, ox]] = top + (bot - top) * wy;
            }
        }
    }
    Image { data: out }
}

/// Crops a window (top-left corner `y0, x0`) of `height x width`.
pub fn crop(src: &Image, y0: usize, x0: usize, height: usize, width: usize) -> Result<Image> {
    if y0 + height > src.height() || x0 + width > src.width() {
        return Err(Error::DimensionMismatch(format!(
            "crop window {height}x{width}+{y0}+{x0} exceeds source {}x{}",
            src.height(),
            src.width()
        )));
    }
    let view = src
        .data()
        .slice(ndarray::s![.., y0..y0 + height, x0..x0 + width]);
    Ok(Image {
        data: view.to_owned(),
    })
}

/// Writes a single-channel float raster in PFM format (grayscale `Pf`,
/// little-endian, bottom-to-top rows).
pub fn save_pfm(map: &Array2<f32>, path: &Path) -> Result<()> {
    let (h, w) = map.dim();
    let mut out: Vec<u8> = Vec::with_capacity(32 + h * w * 4);
    out.extend_from_slice(format!("Pf\n{} {}\n-1.0\n", w, h).as_bytes());
    for y in (0..h).rev() {
        for x in 0..w {
            out.write_f32::<LittleEndian>(map[[y, x]])
                .expect("in-memory write");
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a grayscale PFM raster written by [`save_pfm`].
pub fn load_pfm(path: &Path) -> Result<Array2<f32>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let err = |m: &str| Error::Dataset(format!("{}: bad PFM: {m}", path.display()));
    // Header: three whitespace-terminated tokens ("Pf", "W H", scale).
    let mut pos = 0usize;
    let mut token = |raw: &[u8]| -> Result<String> {
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let tok = String::from_utf8_lossy(&raw[start..pos]).into_owned();
        pos += 1; // single whitespace separator
        Ok(tok)
    };
    let magic = token(&raw)?;
    if magic != "Pf" {
        return Err(err("expected grayscale magic 'Pf'"));
    }
    let w: usize = token(&raw)?.parse().map_err(|_| err("bad width"))?;
    let h: usize = token(&raw)?.parse().map_err(|_| err("bad height"))?;
    let scale: f32 = token(&raw)?.parse().map_err(|_| err("bad scale"))?;
    if scale >= 0.0 {
        return Err(err("big-endian PFM not supported"));
    }
    let mut cursor = std::io::Cursor::new(&raw[pos..]);
    let mut map = Array2::zeros((h, w));
    for y in (0..h).rev() {
        for x in 0..w {
            map[[y, x]] = cursor
                .read_f32::<LittleEndian>()
                .map_err(|_| err("truncated data"))?;
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn rejects_out_of_range_values() {
        let mut data = Array3::zeros((3, 4, 4));
        data[[0, 0, 0]] = 1.5;
        assert!(Image::new(data).is_err());
        let mut data = Array3::zeros((3, 4, 4));
        data[[2, 3, 3]] = f32::NAN;
        assert!(Image::new(data).is_err());
    }

    #[test]
    fn rgb8_round_trip_is_exact() {
        let raw: Vec<u8> = (0..4 * 2 * 3).map(|i| (i * 7) as u8).collect();
        let img = Image::from_rgb8(4, 2, &raw).unwrap();
        assert_eq!(img.to_rgb8().unwrap(), raw);
    }

    #[test]
    fn mirror_is_involutive() {
        let raw: Vec<u8> = (0..8 * 4 * 3).map(|i| (i * 13) as u8).collect();
        let img = Image::from_rgb8(8, 4, &raw).unwrap();
        assert_eq!(img.mirror_h().mirror_h(), img);
        assert_ne!(img.mirror_h(), img);
    }

    #[test]
    fn resize_identity_is_exact() {
        let raw: Vec<u8> = (0..6 * 4 * 3).map(|i| (i * 11) as u8).collect();
        let img = Image::from_rgb8(6, 4, &raw).unwrap();
        assert_eq!(resize_bilinear(&img, 4, 6), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Image::constant(3, 8, 12, 0.25).unwrap();
        let out = resize_bilinear(&img, 4, 6);
        for &v in out.data().iter() {
            assert!((v - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn pfm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let map = arr2(&[[0.0f32, 1.5, 2.25], [4.0, 0.125, 9.75]]);
        save_pfm(&map, &path).unwrap();
        let back = load_pfm(&path).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn crop_bounds_checked() {
        let img = Image::zeros(3, 4, 4);
        assert!(crop(&img, 2, 2, 4, 4).is_err());
        assert_eq!(crop(&img, 1, 1, 2, 2).unwrap().height(), 2);
    }
}

//! Training-time augmentation: random crop window, rescale to the target
//! size, horizontal flip and multiplicative intensity jitter.
//!
//! For stereo pairs every random draw is shared across the two eyes, and a
//! flip mirrors both images *and* swaps left/right roles; mirroring alone
//! would produce negative disparity and break epipolar geometry.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{crop, resize_bilinear, Image};

use super::StereoPair;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub crop_height: usize,
    pub crop_width: usize,
    pub flip_probability: f64,
    pub jitter_min: f64,
    pub jitter_max: f64,
    /// Lower bound on the crop-window scale relative to the largest window
    /// that fits the source at the target aspect ratio.
    pub scale_min: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_height: 256,
            crop_width: 512,
            flip_probability: 0.5,
            jitter_min: 0.8,
            jitter_max: 1.2,
            scale_min: 0.8,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_height % 4 != 0 || self.crop_width % 4 != 0 || self.crop_height == 0 || self.crop_width == 0 {
            return Err(Error::InvalidConfig(format!(
                "crop dims must be positive and divisible by 4, got {}x{}",
                self.crop_height, self.crop_width
            )));
        }
        if !(self.jitter_min > 0.0 && self.jitter_max >= self.jitter_min) {
            return Err(Error::InvalidConfig(format!(
                "intensity jitter range [{}, {}] must be positive and ordered",
                self.jitter_min, self.jitter_max
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidConfig(format!(
                "flip_probability must be in [0, 1], got {}",
                self.flip_probability
            )));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "scale_min must be in (0, 1], got {}",
                self.scale_min
            )));
        }
        Ok(())
    }
}

/// One set of augmentation draws, shared verbatim across the two eyes of a
/// pair. Draw order is fixed: scale, x0, y0, flip, intensity.
struct Draws {
    y0: usize,
    x0: usize,
    win_h: usize,
    win_w: usize,
    flip: bool,
    intensity: f32,
}

fn draw(src_h: usize, src_w: usize, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<Draws> {
    let aspect = cfg.crop_width as f64 / cfg.crop_height as f64;
    // Largest window with the target aspect ratio that fits the source.
    let (max_h, max_w) = if src_w as f64 / src_h as f64 >= aspect {
        (src_h, (src_h as f64 * aspect).floor() as usize)
    } else {
        (((src_w as f64) / aspect).floor() as usize, src_w)
    };
    if max_h < cfg.crop_height || max_w < cfg.crop_width {
        return Err(Error::Dataset(format!(
            "source {src_h}x{src_w} smaller than crop target {}x{}",
            cfg.crop_height, cfg.crop_width
        )));
    }
    // Only scales that keep the window at or above the target size, so the
    // rescale step never upsamples.
    let scale_low = cfg
        .scale_min
        .max(cfg.crop_height as f64 / max_h as f64)
        .max(cfg.crop_width as f64 / max_w as f64);
    let scale = rng.random_range(scale_low..=1.0);
    let win_h = ((max_h as f64 * scale).floor() as usize).max(cfg.crop_height);
    let win_w = ((max_w as f64 * scale).floor() as usize).max(cfg.crop_width);
    let x0 = rng.random_range(0..=src_w - win_w);
    let y0 = rng.random_range(0..=src_h - win_h);
    let flip = rng.random_range(0.0..1.0) < cfg.flip_probability;
    let intensity = rng.random_range(cfg.jitter_min..=cfg.jitter_max) as f32;
    Ok(Draws {
        y0,
        x0,
        win_h,
        win_w,
        flip,
        intensity,
    })
}

fn apply_intensity(img: &Image, factor: f32) -> Image {
    Image::from_bounded(img.data().mapv(|v| (v * factor).clamp(-1.0, 1.0)))
}

fn crop_rescale(img: &Image, d: &Draws, cfg: &AugmentConfig) -> Result<Image> {
    let window = crop(img, d.y0, d.x0, d.win_h, d.win_w)?;
    Ok(resize_bilinear(&window, cfg.crop_height, cfg.crop_width))
}

fn mirror_map(map: &Array2<f32>) -> Array2<f32> {
    let (h, w) = map.dim();
    Array2::from_shape_fn((h, w), |(y, x)| map[[y, w - 1 - x]])
}

/// Geometry-preserving stereo flip: mirrors both eyes and swaps their roles.
/// An exact involution, including the disparity map.
pub fn flip_stereo(pair: &StereoPair) -> StereoPair {
    StereoPair {
        left: pair.right.mirror_h(),
        right: pair.left.mirror_h(),
        disparity_gt: pair.disparity_gt.as_ref().map(mirror_map),
    }
}

/// Nearest-neighbor resample of a disparity map (bilinear would invent
/// intermediate depths at layer boundaries), with values rescaled by the
/// horizontal scale factor.
fn resample_disparity(
    map: &Array2<f32>,
    y0: usize,
    x0: usize,
    win_h: usize,
    win_w: usize,
    out_h: usize,
    out_w: usize,
) -> Array2<f32> {
    let sx = win_w as f64 / out_w as f64;
    let sy = win_h as f64 / out_h as f64;
    let value_scale = (out_w as f64 / win_w as f64) as f32;
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let yy = y0 + (((oy as f64 + 0.5) * sy - 0.5).round().max(0.0) as usize).min(win_h - 1);
        let xx = x0 + (((ox as f64 + 0.5) * sx - 0.5).round().max(0.0) as usize).min(win_w - 1);
        map[[yy, xx]] * value_scale
    })
}

/// Augments a stereo pair: one crop window, one scale, one flip decision and
/// one intensity factor applied to both eyes.
pub fn augment_stereo(pair: &StereoPair, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<StereoPair> {
    cfg.validate()?;
    let d = draw(pair.height(), pair.width(), cfg, rng)?;
    let left = crop_rescale(&pair.left, &d, cfg)?;
    let right = crop_rescale(&pair.right, &d, cfg)?;
    let gt = pair.disparity_gt.as_ref().map(|m| {
        resample_disparity(m, d.y0, d.x0, d.win_h, d.win_w, cfg.crop_height, cfg.crop_width)
    });
    let mut out = StereoPair {
        left: apply_intensity(&left, d.intensity),
        right: apply_intensity(&right, d.intensity),
        disparity_gt: gt,
    };
    if d.flip {
        out = flip_stereo(&out);
    }
    Ok(out)
}

/// Mono variant: crop, rescale, plain mirror, intensity.
pub fn augment_mono(img: &Image, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<Image> {
    cfg.validate()?;
    let d = draw(img.height(), img.width(), cfg, rng)?;
    let mut out = apply_intensity(&crop_rescale(img, &d, cfg)?, d.intensity);
    if d.flip {
        out = out.mirror_h();
    }
    Ok(out)
}

//! Synthetic two-domain stereo scenes with exact ground-truth disparity.
//!
//! A scene is a stack of fronto-parallel primitives (ellipses/rectangles)
//! over a disparity-0 background. The right view renders every layer shifted
//! left by that layer's integer disparity; because all surface detail is a
//! function of layer-local coordinates, right-view content is a rigid copy
//! of left-view content wherever it is not occluded, which makes the
//! warp-reconstruction oracle exact up to interpolation.
//!
//! Domain X is styled flat (uniform fills with a mild vertical shade);
//! domain Y carries procedural stripes, per-pixel hash noise and specular
//! blobs, standing in for the heterogeneous target-domain appearance.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

use super::{Domain, DomainDataset, StereoPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerShape {
    Ellipse,
    Rectangle,
}

/// Appearance of one layer (colors in [0, 1] space).
#[derive(Debug, Clone)]
pub struct LayerStyle {
    pub base: [f32; 3],
    /// Vertical shading amplitude (domain X flavor).
    pub shade: f32,
    /// Stripe texture: amplitude, spatial frequency (cycles/px), orientation.
    pub stripe_amp: f32,
    pub stripe_freq: f32,
    pub stripe_angle: f32,
    pub stripe_phase: f32,
    /// Hash-noise amplitude.
    pub noise_amp: f32,
    /// Specular blobs in layer-local coordinates: (ox, oy, radius, gain).
    pub speculars: Vec<(f32, f32, f32, f32)>,
    /// Seed for the per-layer hash noise.
    pub noise_seed: u64,
}

/// One fronto-parallel primitive at an integer disparity.
#[derive(Debug, Clone)]
pub struct Layer {
    pub shape: LayerShape,
    pub cx: f32,
    pub cy: f32,
    pub rx: f32,
    pub ry: f32,
    pub disparity: u32,
    pub style: LayerStyle,
}

impl Layer {
    fn contains(&self, x: f32, y: f32) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        match self.shape {
            LayerShape::Ellipse => (dx / self.rx).powi(2) + (dy / self.ry).powi(2) <= 1.0,
            LayerShape::Rectangle => dx.abs() <= self.rx && dy.abs() <= self.ry,
        }
    }

    /// Color at layer-local coordinates, in [0, 1].
    fn color_at(&self, lx: f32, ly: f32) -> [f32; 3] {
        let s = &self.style;
        let mut add = s.shade * ly * 0.01;
        if s.stripe_amp > 0.0 {
            let t = lx * s.stripe_angle.cos() + ly * s.stripe_angle.sin();
            add += s.stripe_amp * (std::f32::consts::TAU * s.stripe_freq * t + s.stripe_phase).sin();
        }
        if s.noise_amp > 0.0 {
            add += s.noise_amp * (hash01(s.noise_seed, lx.round() as i64, ly.round() as i64) - 0.5);
        }
        for &(ox, oy, r, gain) in &s.speculars {
            let d2 = ((lx - ox) / r).powi(2) + ((ly - oy) / r).powi(2);
            if d2 < 1.0 {
                add += gain * (1.0 - d2);
            }
        }
        [
            (s.base[0] + add).clamp(0.0, 1.0),
            (s.base[1] + add).clamp(0.0, 1.0),
            (s.base[2] + add).clamp(0.0, 1.0),
        ]
    }
}

/// Layer stack ordered far-to-near (ascending disparity); the background is
/// `layers[0]` and must have disparity 0.
#[derive(Debug, Clone)]
pub struct Scene {
    pub layers: Vec<Layer>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-pixel noise in [0, 1), a pure function of integer
/// layer-local coordinates so it shifts rigidly with the layer.
fn hash01(seed: u64, x: i64, y: i64) -> f32 {
    let h = splitmix64(seed ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).rotate_left(32));
    (h >> 40) as f32 / (1u64 << 24) as f32
}

impl Scene {
    /// Renders the left/right views and the exact left-view disparity map.
    pub fn render(&self, height: usize, width: usize) -> Result<StereoPair> {
        if self.layers.is_empty() || self.layers[0].disparity != 0 {
            return Err(Error::InvalidConfig(
                "scene needs a background layer at disparity 0".into(),
            ));
        }
        let mut left = Array3::zeros((3, height, width));
        let mut right = Array3::zeros((3, height, width));
        let mut gt = Array2::zeros((height, width));
        for y in 0..height {
            let fy = y as f32;
            for x in 0..width {
                let fx = x as f32;
                // Topmost (nearest) layer wins; iterate from the top.
                for layer in self.layers.iter().rev() {
                    if layer.contains(fx, fy) {
                        let c = layer.color_at(fx - layer.cx, fy - layer.cy);
                        for ch in 0..3 {
                            left[[ch, y, x]] = c[ch] * 2.0 - 1.0;
                        }
                        gt[[y, x]] = layer.disparity as f32;
                        break;
                    }
                }
                for layer in self.layers.iter().rev() {
                    // A right-view pixel shows the layer if the left-view
                    // position shifted right by the disparity is inside it.
                    let lx = fx + layer.disparity as f32;
                    if layer.contains(lx, fy) {
                        let c = layer.color_at(lx - layer.cx, fy - layer.cy);
                        for ch in 0..3 {
                            right[[ch, y, x]] = c[ch] * 2.0 - 1.0;
                        }
                        break;
                    }
                }
            }
        }
        StereoPair::new(Image::new(left)?, Image::new(right)?, Some(gt))
    }
}

fn random_style(rng: &mut ChaCha8Rng, domain: Domain, textured_bg: bool) -> LayerStyle {
    let base = [
        rng.random_range(0.2f32..0.8),
        rng.random_range(0.2f32..0.8),
        rng.random_range(0.2f32..0.8),
    ];
    match domain {
        Domain::X => LayerStyle {
            base,
            shade: rng.random_range(0.5f32..1.5),
            stripe_amp: 0.0,
            stripe_freq: 0.0,
            stripe_angle: 0.0,
            stripe_phase: 0.0,
            noise_amp: 0.0,
            speculars: Vec::new(),
            noise_seed: rng.random(),
        },
        Domain::Y => {
            let n_spec = if textured_bg { 0 } else { rng.random_range(1..=2) };
            let speculars = (0..n_spec)
                .map(|_| {
                    (
                        rng.random_range(-12.0f32..12.0),
                        rng.random_range(-8.0f32..8.0),
                        rng.random_range(3.0f32..9.0),
                        rng.random_range(0.25f32..0.5),
                    )
                })
                .collect();
            LayerStyle {
                base,
                shade: rng.random_range(0.0f32..0.8),
                stripe_amp: rng.random_range(0.06f32..0.16),
                stripe_freq: rng.random_range(0.03f32..0.12),
                stripe_angle: rng.random_range(0.0f32..std::f32::consts::PI),
                stripe_phase: rng.random_range(0.0f32..std::f32::consts::TAU),
                noise_amp: rng.random_range(0.04f32..0.1),
                speculars,
                noise_seed: rng.random(),
            }
        }
    }
}

/// Draws a random scene. Disparities are integers in [1, max_disparity] for
/// foreground layers; the background sits at disparity 0.
fn random_scene(rng: &mut ChaCha8Rng, domain: Domain, height: usize, width: usize, max_disparity: usize) -> Scene {
    let h = height as f32;
    let w = width as f32;
    let background = Layer {
        shape: LayerShape::Rectangle,
        cx: w / 2.0,
        cy: h / 2.0,
        rx: w, // covers everything
        ry: h,
        disparity: 0,
        style: random_style(rng, domain, true),
    };
    let n_layers = rng.random_range(3..=6);
    let mut layers = vec![background];
    let mut fg: Vec<Layer> = (0..n_layers)
        .map(|_| {
            let shape = if rng.random_range(0.0..1.0) < 0.5 {
                LayerShape::Ellipse
            } else {
                LayerShape::Rectangle
            };
            Layer {
                shape,
                cx: rng.random_range(0.15 * w..0.85 * w),
                cy: rng.random_range(0.15 * h..0.85 * h),
                rx: rng.random_range(0.1 * w..0.28 * w),
                ry: rng.random_range(0.12 * h..0.3 * h),
                disparity: rng.random_range(1..=max_disparity as u32),
                style: random_style(rng, domain, false),
            }
        })
        .collect();
    // Far-to-near drawing order.
    fg.sort_by_key(|l| l.disparity);
    layers.extend(fg);
    Scene { layers }
}

/// Generates `n` synthetic stereo pairs for one domain. Scene `i` derives
/// from RNG stream `i` of the seed, so equal seeds give bitwise-identical
/// datasets and different splits use disjoint seeds.
pub fn synth_generate(
    n: usize,
    domain: Domain,
    size: (usize, usize),
    max_disparity: usize,
    seed: u64,
) -> Result<DomainDataset> {
    let (height, width) = size;
    if n == 0 {
        return Err(Error::InvalidConfig("synth_generate needs n >= 1".into()));
    }
    if max_disparity == 0 || max_disparity >= width / 8 {
        return Err(Error::InvalidConfig(format!(
            "max_disparity must be in [1, width/8) = [1, {}), got {max_disparity}",
            width / 8
        )));
    }
    if height % 4 != 0 || width % 4 != 0 || height < 16 || width < 16 {
        return Err(Error::InvalidConfig(format!(
            "synthetic size must be at least 16x16 and divisible by 4, got {height}x{width}"
        )));
    }
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let scene = random_scene(&mut rng, domain, height, width, max_disparity);
        pairs.push(scene.render(height, width)?);
    }
    DomainDataset::new_stereo(domain, pairs)
}

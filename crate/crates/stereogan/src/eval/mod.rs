//! Stereo-consistency evaluation: block-matching disparity estimation, a
//! disparity-guided warp, and warp-error reports comparing translations.
//!
//! The metric: warp the translated right image along the *input* pair's
//! disparity field (ground truth when available, block matching otherwise)
//! and measure the mean absolute difference against the translated left
//! image. A translation that preserves the source geometry scores low.

mod compare;

pub use compare::{compare_models, CompareConfig, CompareOutcome, CompareRow, ComparisonTable, SeedSummary};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data::StereoPair;
use crate::error::{Error, Result};
use crate::image::Image;

/// Per-pixel horizontal offsets with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub values: Array2<f32>,
    pub valid: Array2<bool>,
}

impl DisparityMap {
    pub fn uniform(height: usize, width: usize, disparity: f32) -> Self {
        DisparityMap {
            values: Array2::from_elem((height, width), disparity),
            valid: Array2::from_elem((height, width), true),
        }
    }

    pub fn from_ground_truth(gt: &Array2<f32>) -> Self {
        DisparityMap {
            values: gt.clone(),
            valid: Array2::from_elem(gt.dim(), true),
        }
    }

    pub fn valid_fraction(&self) -> f64 {
        let n = self.valid.len();
        if n == 0 {
            return 0.0;
        }
        self.valid.iter().filter(|v| **v).count() as f64 / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockMatchConfig {
    /// Odd block edge length.
    pub block: usize,
    pub max_disparity: usize,
    /// Per-pixel SAD ceiling for a match to count as valid.
    pub sad_threshold: f64,
    /// Minimum left-block variance; flat blocks carry no signal.
    pub min_variance: f64,
}

impl Default for BlockMatchConfig {
    fn default() -> Self {
        BlockMatchConfig {
            block: 9,
            max_disparity: 16,
            sad_threshold: 0.25,
            min_variance: 1e-4,
        }
    }
}

impl BlockMatchConfig {
    pub fn validate(&self, width: usize) -> Result<()> {
        if self.block < 3 || self.block % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "block must be odd and >= 3, got {}",
                self.block
            )));
        }
        if self.max_disparity == 0 || self.max_disparity >= width / 4 {
            return Err(Error::InvalidConfig(format!(
                "max_disparity must be in [1, width/4) = [1, {}), got {}",
                width / 4,
                self.max_disparity
            )));
        }
        if self.sad_threshold <= 0.0 || self.min_variance < 0.0 {
            return Err(Error::InvalidConfig(
                "sad_threshold must be > 0 and min_variance >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn luminance(img: &Image) -> Array2<f64> {
    let (c, h, w) = img.data().dim();
    let mut out = Array2::zeros((h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[[y, x]] += img.data()[[ci, y, x]] as f64;
            }
        }
    }
    out.mapv_into(|v| v / c as f64)
}

/// Summed-area table with a leading zero row/column.
fn integral(src: &Array2<f64>) -> Array2<f64> {
    let (h, w) = src.dim();
    let mut out = Array2::zeros((h + 1, w + 1));
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += src[[y, x]];
            out[[y + 1, x + 1]] = out[[y, x + 1]] + row;
        }
    }
    out
}

fn box_sum(ii: &Array2<f64>, y: usize, x: usize, half: usize) -> f64 {
    let (y0, y1) = (y - half, y + half + 1);
    let (x0, x1) = (x - half, x + half + 1);
    ii[[y1, x1]] - ii[[y0, x1]] - ii[[y1, x0]] + ii[[y0, x0]]
}

/// Sum-of-absolute-differences block matching over the disparity range
/// `[0, max_disparity]`, scanning the right image leftward.
///
/// Invalid pixels: within `max_disparity + block/2` of the left border,
/// within `block/2` of the other borders, flat blocks (variance below the
/// threshold), and matches whose best per-pixel SAD exceeds the threshold.
pub fn block_match_disparity(pair: &StereoPair, cfg: &BlockMatchConfig) -> Result<DisparityMap> {
    let (h, w) = (pair.height(), pair.width());
    cfg.validate(w)?;
    if h < cfg.block || w < cfg.block {
        return Err(Error::Eval(format!(
            "image {h}x{w} smaller than block {}",
            cfg.block
        )));
    }
    let half = cfg.block / 2;
    let gl = luminance(&pair.left);
    let gr = luminance(&pair.right);

    // Left-block variance from integral images of g and g^2.
    let ii_l = integral(&gl);
    let ii_l2 = integral(&gl.mapv(|v| v * v));
    let npix = (cfg.block * cfg.block) as f64;

    let mut best_sad = Array2::from_elem((h, w), f64::INFINITY);
    let mut best_d = Array2::zeros((h, w));
    let x_min = cfg.max_disparity + half;
    // One absolute-difference plane per candidate disparity, box-filtered
    // via its integral image.
    for d in 0..=cfg.max_disparity {
        let mut diff = Array2::zeros((h, w));
        for y in 0..h {
            for x in d..w {
                diff[[y, x]] = (gl[[y, x]] - gr[[y, x - d]]).abs();
            }
        }
        let ii = integral(&diff);
        for y in half..h - half {
            for x in x_min..w - half {
                let sad = box_sum(&ii, y, x, half);
                if sad < best_sad[[y, x]] {
                    best_sad[[y, x]] = sad;
                    best_d[[y, x]] = d as f32;
                }
            }
        }
    }

    let mut valid = Array2::from_elem((h, w), false);
    for y in half..h - half {
        for x in x_min..w - half {
            let mean = box_sum(&ii_l, y, x, half) / npix;
            let var = box_sum(&ii_l2, y, x, half) / npix - mean * mean;
            valid[[y, x]] =
                var >= cfg.min_variance && best_sad[[y, x]] / npix <= cfg.sad_threshold;
        }
    }
    Ok(DisparityMap {
        values: best_d,
        valid,
    })
}

/// Samples `img` at horizontally displaced coordinates (`x - d`) with linear
/// interpolation. The mask marks out-of-range samples and invalid disparities.
pub fn warp_by_disparity(img: &Image, d: &DisparityMap) -> Result<(Image, Array2<bool>)> {
    let (c, h, w) = img.data().dim();
    if d.values.dim() != (h, w) {
        return Err(Error::DimensionMismatch(format!(
            "disparity {:?} does not match image {h}x{w}",
            d.values.dim()
        )));
    }
    let mut out = Array3::zeros((c, h, w));
    let mut mask = Array2::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            if !d.valid[[y, x]] {
                continue;
            }
            let sx = x as f32 - d.values[[y, x]];
            if sx < 0.0 || sx > (w - 1) as f32 {
                continue;
            }
            mask[[y, x]] = true;
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let t = sx - x0 as f32;
            for ci in 0..c {
                let a = img.data()[[ci, y, x0]];
                let b = img.data()[[ci, y, x1]];
                out[[ci, y, x]] = a + (b - a) * t;
            }
        }
    }
    Ok((Image::from_bounded(out), mask))
}

/// Left-view visibility from a disparity map: a pixel is occluded when some
/// other pixel in its row maps to the same right-image column with larger
/// disparity (nearer surface). Row-wise z-buffer.
pub fn visibility_from_disparity(d: &Array2<f32>) -> Array2<bool> {
    let (h, w) = d.dim();
    let mut vis = Array2::from_elem((h, w), true);
    let mut zbuf: Vec<f32> = vec![f32::NEG_INFINITY; w];
    let mut owner: Vec<usize> = vec![usize::MAX; w];
    for y in 0..h {
        zbuf.fill(f32::NEG_INFINITY);
        owner.fill(usize::MAX);
        for x in 0..w {
            let r = x as f32 - d[[y, x]];
            if r < 0.0 {
                vis[[y, x]] = false;
                continue;
            }
            let bin = r.round() as usize;
            if bin >= w {
                vis[[y, x]] = false;
                continue;
            }
            if d[[y, x]] > zbuf[bin] {
                if owner[bin] != usize::MAX {
                    vis[[y, owner[bin]]] = false;
                }
                zbuf[bin] = d[[y, x]];
                owner[bin] = x;
            } else {
                vis[[y, x]] = false;
            }
        }
    }
    vis
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    pub block: BlockMatchConfig,
    /// Below this valid-pixel fraction a report is flagged unreliable.
    pub min_valid_fraction: f64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            block: BlockMatchConfig::default(),
            min_valid_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisparitySource {
    GroundTruth,
    BlockMatch,
}

/// Warp error of one translated pair against the input pair's geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub warp_error: f64,
    pub valid_fraction: f64,
    pub reliable: bool,
    pub disparity_source: DisparitySource,
}

/// Stereo-consistency error of `output` relative to the geometry of `input`.
///
/// Uses the input pair's ground-truth disparity when present (excluding
/// occluded pixels, which have no right-view counterpart), otherwise block
/// matching on the input pair. Low validity is flagged, never silently
/// dropped.
pub fn stereo_consistency_error(
    input: &StereoPair,
    output: &StereoPair,
    cfg: &ConsistencyConfig,
) -> Result<FrameReport> {
    if input.height() != output.height() || input.width() != output.width() {
        return Err(Error::DimensionMismatch(
            "input and output pairs must share dimensions".into(),
        ));
    }
    let (d, source) = match &input.disparity_gt {
        Some(gt) => {
            let mut map = DisparityMap::from_ground_truth(gt);
            let vis = visibility_from_disparity(gt);
            ndarray::Zip::from(&mut map.valid).and(&vis).for_each(|v, &ok| *v = *v && ok);
            (map, DisparitySource::GroundTruth)
        }
        None => (
            block_match_disparity(input, &cfg.block)?,
            DisparitySource::BlockMatch,
        ),
    };
    let (warped, mask) = warp_by_disparity(&output.right, &d)?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    let c = output.left.channels();
    for y in 0..output.height() {
        for x in 0..output.width() {
            if !mask[[y, x]] {
                continue;
            }
            for ci in 0..c {
                sum += (warped.data()[[ci, y, x]] as f64 - output.left.data()[[ci, y, x]] as f64).abs();
            }
            count += 1;
        }
    }
    let valid_fraction = count as f64 / (output.height() * output.width()) as f64;
    let warp_error = if count == 0 { f64::NAN } else { sum / (count * c) as f64 };
    Ok(FrameReport {
        warp_error,
        valid_fraction,
        reliable: valid_fraction >= cfg.min_valid_fraction,
        disparity_source: source,
    })
}

/// Aggregate over per-frame reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub frames: Vec<FrameReport>,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub mean_valid_fraction: f64,
    pub unreliable_frames: usize,
}

pub fn aggregate_reports(frames: Vec<FrameReport>) -> Result<ConsistencyReport> {
    if frames.is_empty() {
        return Err(Error::Eval("no frames to aggregate".into()));
    }
    let reliable: Vec<f64> = frames
        .iter()
        .filter(|f| f.reliable)
        .map(|f| f.warp_error)
        .collect();
    let unreliable_frames = frames.len() - reliable.len();
    let (mean, median, std) = if reliable.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let n = reliable.len() as f64;
        let mean = reliable.iter().sum::<f64>() / n;
        let mut sorted = reliable.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };
        let var = reliable.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, median, var.sqrt())
    };
    let mean_valid_fraction =
        frames.iter().map(|f| f.valid_fraction).sum::<f64>() / frames.len() as f64;
    Ok(ConsistencyReport {
        frames,
        mean,
        median,
        std,
        mean_valid_fraction,
        unreliable_frames,
    })
}

/// Writes a grid of images (rows of columns) into one raster, with a 2px
/// separator, for side-by-side inspection.
pub fn image_grid(rows: &[Vec<&Image>]) -> Result<Image> {
    if rows.is_empty() || rows.iter().any(|r| r.is_empty()) {
        return Err(Error::Eval("empty image grid".into()));
    }
    let h = rows[0][0].height();
    let w = rows[0][0].width();
    for row in rows {
        for img in row {
            if img.height() != h || img.width() != w {
                return Err(Error::DimensionMismatch(
                    "grid images must share dimensions".into(),
                ));
            }
        }
    }
    let sep = 2usize;
    let cols = rows.iter().map(|r| r.len()).max().unwrap();
    let gh = rows.len() * h + (rows.len() - 1) * sep;
    let gw = cols * w + (cols - 1) * sep;
    let mut out = Array3::from_elem((3, gh, gw), -1.0f32);
    for (ri, row) in rows.iter().enumerate() {
        for (ci, img) in row.iter().enumerate() {
            let y0 = ri * (h + sep);
            let x0 = ci * (w + sep);
            out.slice_mut(ndarray::s![.., y0..y0 + h, x0..x0 + w])
                .assign(img.data());
        }
    }
    Ok(Image::from_bounded(out))
}

#[cfg(test)]
mod tests;

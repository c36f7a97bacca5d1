//! Datasets: loading from disk, stereo-coherent augmentation, and the
//! synthetic two-domain stereo generator used for quantitative evaluation.
//!
//! Directory layout, stereo: `root/{left,right}/stem.png` with optional
//! `root/disparity/stem.pfm` ground truth. Mono: `root/stem.png`. Pairing is
//! by filename stem, ordered lexicographically.

mod augment;
mod synth;

pub use augment::{augment_mono, augment_stereo, flip_stereo, AugmentConfig};
pub use synth::{synth_generate, Layer, LayerShape, LayerStyle, Scene};

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_pfm, Image};

/// The two image distributions of the translation task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    X,
    Y,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::X => write!(f, "X"),
            Domain::Y => write!(f, "Y"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    Stereo,
    Mono,
}

/// A rectified stereo pair, optionally with ground-truth disparity for the
/// left view (positive values shift right-view content leftward).
#[derive(Debug, Clone, PartialEq)]
pub struct StereoPair {
    pub left: Image,
    pub right: Image,
    pub disparity_gt: Option<Array2<f32>>,
}

impl StereoPair {
    pub fn new(left: Image, right: Image, disparity_gt: Option<Array2<f32>>) -> Result<Self> {
        if !left.same_shape(&right) {
            return Err(Error::DimensionMismatch(format!(
                "stereo pair dims differ: left {}x{}, right {}x{}",
                left.height(),
                left.width(),
                right.height(),
                right.width()
            )));
        }
        if let Some(gt) = &disparity_gt {
            if gt.dim() != (left.height(), left.width()) {
                return Err(Error::DimensionMismatch(format!(
                    "disparity map {:?} does not match image {}x{}",
                    gt.dim(),
                    left.height(),
                    left.width()
                )));
            }
            if gt.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidImage(
                    "disparity ground truth must be finite and non-negative".into(),
                ));
            }
        }
        Ok(StereoPair {
            left,
            right,
            disparity_gt,
        })
    }

    pub fn height(&self) -> usize {
        self.left.height()
    }

    pub fn width(&self) -> usize {
        self.left.width()
    }
}

#[derive(Debug, Clone)]
enum Samples {
    Stereo(Vec<StereoPair>),
    Mono(Vec<Image>),
}

/// Ordered, non-empty collection of samples from one domain.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    domain: Domain,
    samples: Samples,
}

/// One drawn training sample (batch size is fixed at 1).
#[derive(Debug, Clone, Copy)]
pub enum SampleRef<'a> {
    Stereo(&'a StereoPair),
    Mono(&'a Image),
}

impl DomainDataset {
    pub fn new_stereo(domain: Domain, pairs: Vec<StereoPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Dataset("stereo dataset is empty".into()));
        }
        Ok(DomainDataset {
            domain,
            samples: Samples::Stereo(pairs),
        })
    }

    pub fn new_mono(domain: Domain, images: Vec<Image>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Dataset("mono dataset is empty".into()));
        }
        Ok(DomainDataset {
            domain,
            samples: Samples::Mono(images),
        })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn mode(&self) -> DatasetMode {
        match self.samples {
            Samples::Stereo(_) => DatasetMode::Stereo,
            Samples::Mono(_) => DatasetMode::Mono,
        }
    }

    pub fn len(&self) -> usize {
        match &self.samples {
            Samples::Stereo(v) => v.len(),
            Samples::Mono(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, idx: usize) -> SampleRef<'_> {
        match &self.samples {
            Samples::Stereo(v) => SampleRef::Stereo(&v[idx]),
            Samples::Mono(v) => SampleRef::Mono(&v[idx]),
        }
    }

    pub fn stereo_samples(&self) -> Result<&[StereoPair]> {
        match &self.samples {
            Samples::Stereo(v) => Ok(v),
            Samples::Mono(_) => Err(Error::Dataset("expected a stereo dataset".into())),
        }
    }

    pub fn mono_samples(&self) -> Result<&[Image]> {
        match &self.samples {
            Samples::Stereo(_) => Err(Error::Dataset("expected a mono dataset".into())),
            Samples::Mono(v) => Ok(v),
        }
    }

    /// Derives a mono dataset from the left eyes of a stereo dataset.
    pub fn mono_from_left_eyes(&self) -> Result<DomainDataset> {
        let pairs = self.stereo_samples()?;
        DomainDataset::new_mono(self.domain, pairs.iter().map(|p| p.left.clone()).collect())
    }
}

/// Draws one uniformly random sample (batch size is fixed at 1).
pub fn sample_batch<'a>(ds: &'a DomainDataset, rng: &mut ChaCha8Rng) -> SampleRef<'a> {
    let idx = rng.random_range(0..ds.len());
    ds.get(idx)
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Dataset(format!("unreadable stem: {}", path.display())))?
                .to_string();
            out.insert(stem, path);
        }
    }
    Ok(out)
}

/// Loads a dataset directory, pairing `left/stem.png` with `right/stem.png`
/// in stereo mode. A stem present on one side only is an error naming the
/// orphan; an empty directory is an error.
pub fn load_dataset(root: &Path, mode: DatasetMode, domain: Domain) -> Result<DomainDataset> {
    match mode {
        DatasetMode::Mono => {
            let stems = png_stems(root)?;
            let mut images = Vec::with_capacity(stems.len());
            for (_, path) in stems {
                images.push(Image::load_png(&path)?);
            }
            DomainDataset::new_mono(domain, images)
        }
        DatasetMode::Stereo => {
            let left = png_stems(&root.join("left"))?;
            let right = png_stems(&root.join("right"))?;
            for stem in left.keys() {
                if !right.contains_key(stem) {
                    return Err(Error::Dataset(format!(
                        "orphan stereo image: left/{stem}.png has no right counterpart"
                    )));
                }
            }
            for stem in right.keys() {
                if !left.contains_key(stem) {
                    return Err(Error::Dataset(format!(
                        "orphan stereo image: right/{stem}.png has no left counterpart"
                    )));
                }
            }
            let disparity_dir = root.join("disparity");
            let mut pairs = Vec::with_capacity(left.len());
            for (stem, lpath) in &left {
                let l = Image::load_png(lpath)?;
                let r = Image::load_png(&right[stem])?;
                let gt_path = disparity_dir.join(format!("{stem}.pfm"));
                let gt = if gt_path.is_file() {
                    Some(load_pfm(&gt_path)?)
                } else {
                    None
                };
                pairs.push(StereoPair::new(l, r, gt)?);
            }
            DomainDataset::new_stereo(domain, pairs)
        }
    }
}

#[cfg(test)]
mod tests;

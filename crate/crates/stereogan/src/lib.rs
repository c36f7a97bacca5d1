//! Unpaired stereo image-to-image translation with cross-domain conditional
//! generators, plus a synthetic-data harness that measures how well a
//! translation preserves stereo disparity.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`model`]: two-input conditional generators and whole-image
//!   discriminators with hand-derived backward passes.
//! - [`losses`]: least-squares adversarial terms and L1 cycle consistency.
//! - [`data`]: dataset loading, stereo-coherent augmentation and a synthetic
//!   stereo scene generator with exact ground-truth disparity.
//! - [`trainer`]: the chained stereo conditioning scheme, history buffers,
//!   Adam, and the monoscopic-pretrain curriculum.
//! - [`eval`]: block-matching disparity, disparity warps and
//!   stereo-consistency reports comparing two trained models.

pub mod data;
pub mod error;
pub mod eval;
pub mod image;
pub mod losses;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
pub use image::Image;

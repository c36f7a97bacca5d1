//! Adversarial and cycle-consistency loss arithmetic.
//!
//! The adversarial objective is least-squares (targets 1 for real, 0 for
//! fake); a logistic form is available behind [`AdvForm`] for ablations.
//! The discriminator objective carries a slowdown multiplier (default 0.5),
//! equivalent to halving it, so the discriminator learns slower than the
//! generators.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cycle: f64,
    pub d_slowdown: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cycle: 20.0,
            d_slowdown: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cycle > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda_cycle must be > 0, got {}",
                self.lambda_cycle
            )));
        }
        if !(self.d_slowdown > 0.0 && self.d_slowdown <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "d_slowdown must be in (0, 1], got {}",
                self.d_slowdown
            )));
        }
        Ok(())
    }
}

/// Form of the adversarial objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvForm {
    /// Least-squares targets (the default).
    LeastSquares,
    /// Logistic (cross-entropy) targets, for ablation.
    CrossEntropy,
}

impl Default for AdvForm {
    fn default() -> Self {
        AdvForm::LeastSquares
    }
}

/// Loss weighting plus the optional switches layered on top of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub adv_form: AdvForm,
    /// Weight of the optional identity (color-preservation) term, as a
    /// fraction of `lambda_cycle`. Off by default.
    pub identity_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            adv_form: AdvForm::default(),
            identity_weight: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.identity_weight < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "identity_weight must be >= 0, got {}",
                self.identity_weight
            )));
        }
        Ok(())
    }
}

/// Generator-side adversarial loss: mean squared error of the fake scores
/// against the "real" target 1.
pub fn adv_loss_generator(fake_scores: &[f64]) -> Result<f64> {
    if fake_scores.is_empty() {
        return Err(Error::InvalidConfig("adv_loss_generator needs at least one score".into()));
    }
    let n = fake_scores.len() as f64;
    Ok(fake_scores.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>() / n)
}

/// Discriminator objective: `d_slowdown * (MSE(real, 1) + MSE(fake, 0))`.
pub fn adv_loss_discriminator(real_scores: &[f64], fake_scores: &[f64], w: &LossWeights) -> Result<f64> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(Error::InvalidConfig(
            "adv_loss_discriminator needs non-empty real and fake scores".into(),
        ));
    }
    let nr = real_scores.len() as f64;
    let nf = fake_scores.len() as f64;
    let real_term = real_scores.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>() / nr;
    let fake_term = fake_scores.iter().map(|s| s.powi(2)).sum::<f64>() / nf;
    Ok(w.d_slowdown * (real_term + fake_term))
}

/// Cycle-consistency loss: `lambda * mean(|original - reconstructed|)` over
/// all pixels and channels, accumulated in f64.
pub fn cycle_loss(original: &Image, reconstructed: &Image, w: &LossWeights) -> Result<f64> {
    if !original.same_shape(reconstructed) {
        return Err(Error::DimensionMismatch(format!(
            "cycle_loss dims differ: {:?} vs {:?}",
            original.data().dim(),
            reconstructed.data().dim()
        )));
    }
    Ok(w.lambda_cycle * mean_abs_diff(original.data(), reconstructed.data()))
}

pub(crate) fn mean_abs_diff(a: &Array3<f32>, b: &Array3<f32>) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    sum / a.len() as f64
}

/// Gradient of [`cycle_loss`] w.r.t. the reconstruction:
/// `lambda/N * sign(reconstructed - original)`, with 0 at exact ties.
pub(crate) fn cycle_loss_grad(original: &Array3<f32>, reconstructed: &Array3<f32>, lambda: f64) -> Array3<f32> {
    let n = original.len() as f64;
    let scale = (lambda / n) as f32;
    let mut g = reconstructed.clone();
    g.zip_mut_with(original, |r, &o| {
        *r = if *r > o {
            scale
        } else if *r < o {
            -scale
        } else {
            0.0
        };
    });
    g
}

/// Per-term record kept alongside the summed generator objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv_terms: Vec<f64>,
    pub cycle_terms: Vec<f64>,
    pub total: f64,
}

/// Sums adversarial and (already lambda-weighted) cycle terms, returning the
/// per-term breakdown for logging.
pub fn total_generator_loss(adv_terms: &[f64], cycle_terms: &[f64]) -> (f64, LossBreakdown) {
    let total = adv_terms.iter().sum::<f64>() + cycle_terms.iter().sum::<f64>();
    (
        total,
        LossBreakdown {
            adv_terms: adv_terms.to_vec(),
            cycle_terms: cycle_terms.to_vec(),
            total,
        },
    )
}

/// One generator-side adversarial term and its derivative w.r.t. the score.
pub(crate) fn gen_adv_term(score: f64, form: AdvForm) -> (f64, f64) {
    match form {
        AdvForm::LeastSquares => ((score - 1.0).powi(2), 2.0 * (score - 1.0)),
        AdvForm::CrossEntropy => {
            // softplus(-s), derivative -sigmoid(-s)
            let sp = softplus(-score);
            (sp, -sigmoid(-score))
        }
    }
}

/// Discriminator loss over score lists plus per-score derivatives.
pub(crate) fn disc_adv_loss_and_grads(
    real: &[f64],
    fake: &[f64],
    w: &LossWeights,
    form: AdvForm,
) -> (f64, Vec<f64>, Vec<f64>) {
    let nr = real.len() as f64;
    let nf = fake.len() as f64;
    let k = w.d_slowdown;
    match form {
        AdvForm::LeastSquares => {
            let loss = k * (real.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>() / nr
                + fake.iter().map(|s| s.powi(2)).sum::<f64>() / nf);
            let greal = real.iter().map(|s| k * 2.0 * (s - 1.0) / nr).collect();
            let gfake = fake.iter().map(|s| k * 2.0 * s / nf).collect();
            (loss, greal, gfake)
        }
        AdvForm::CrossEntropy => {
            let loss = k * (real.iter().map(|s| softplus(-s)).sum::<f64>() / nr
                + fake.iter().map(|s| softplus(*s)).sum::<f64>() / nf);
            let greal = real.iter().map(|s| -k * sigmoid(-s) / nr).collect();
            let gfake = fake.iter().map(|s| k * sigmoid(*s) / nf).collect();
            (loss, greal, gfake)
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    // Numerically stable log(1 + e^x).
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

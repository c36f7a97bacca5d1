//! Side-by-side comparison of two trained models on a stereo test set.
//!
//! Both models translate every test pair under matched condition samples
//! (same seed, same draws), and their stereo-consistency errors are tallied
//! into per-frame win/tie/loss rows and per-seed means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetMode, DomainDataset, SampleRef, StereoPair};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::trainer::{TrainerState, Translated};

use super::{stereo_consistency_error, ConsistencyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    /// Relative error difference below which a frame counts as a tie.
    pub tie_tolerance: f64,
    pub consistency: ConsistencyConfig,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            tie_tolerance: 0.02,
            consistency: ConsistencyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareOutcome {
    WinA,
    Tie,
    WinB,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub seed: u64,
    pub frame: usize,
    pub err_a: f64,
    pub err_b: f64,
    pub outcome: CompareOutcome,
    /// False when either frame's validity fell below the threshold.
    pub reliable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub mean_a: f64,
    pub mean_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<CompareRow>,
    pub per_seed: Vec<SeedSummary>,
    pub wins_a: usize,
    pub ties: usize,
    pub wins_b: usize,
    pub unreliable_rows: usize,
    pub median_per_seed_a: f64,
    pub median_per_seed_b: f64,
}

impl ComparisonTable {
    /// Tab-separated rows, one line per (seed, frame).
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("seed\tframe\terr_a\terr_b\toutcome\treliable\n");
        for r in &self.rows {
            let o = match r.outcome {
                CompareOutcome::WinA => "win_a",
                CompareOutcome::Tie => "tie",
                CompareOutcome::WinB => "win_b",
            };
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.6}\t{}\t{}\n",
                r.seed, r.frame, r.err_a, r.err_b, o, r.reliable
            ));
        }
        out
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn condition_image<'a>(pool: &'a DomainDataset, idx: usize) -> &'a Image {
    match pool.get(idx) {
        SampleRef::Stereo(p) => &p.left,
        SampleRef::Mono(img) => img,
    }
}

fn translate_pair(model: &TrainerState, pair: &StereoPair, cond: &Image) -> Result<StereoPair> {
    let mode = model.default_translate_mode();
    let cond_arg = if model.generator().is_conditional() {
        Some(cond)
    } else {
        None
    };
    match model.translate(&pair.left, Some(&pair.right), cond_arg, mode)? {
        Translated::Stereo(l, r) => StereoPair::new(l, r, None),
        Translated::Mono(_) => Err(Error::Eval(
            "comparison requires stereo-producing translation modes".into(),
        )),
    }
}

/// Translates every test pair under both models with matched conditions per
/// seed and tallies stereo-consistency outcomes. Ties are decided by
/// relative difference against `tie_tolerance`.
pub fn compare_models(
    test_set: &DomainDataset,
    condition_pool: &DomainDataset,
    model_a: &TrainerState,
    model_b: &TrainerState,
    seeds: &[u64],
    cfg: &CompareConfig,
) -> Result<ComparisonTable> {
    if test_set.mode() != DatasetMode::Stereo {
        return Err(Error::Eval("comparison test set must be stereo".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Eval("at least one seed is required".into()));
    }
    let pairs = test_set.stereo_samples()?;
    let mut rows = Vec::with_capacity(pairs.len() * seeds.len());
    let mut per_seed = Vec::with_capacity(seeds.len());
    let (mut wins_a, mut ties, mut wins_b, mut unreliable_rows) = (0, 0, 0, 0);
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut sum_a, mut sum_b) = (0.0, 0.0);
        for (frame, pair) in pairs.iter().enumerate() {
            // One condition draw per frame, shared by both models.
            let cond = condition_image(condition_pool, rng.random_range(0..condition_pool.len()));
            let out_a = translate_pair(model_a, pair, cond)?;
            let out_b = translate_pair(model_b, pair, cond)?;
            let rep_a = stereo_consistency_error(pair, &out_a, &cfg.consistency)?;
            let rep_b = stereo_consistency_error(pair, &out_b, &cfg.consistency)?;
            let (ea, eb) = (rep_a.warp_error, rep_b.warp_error);
            let scale = ea.abs().max(eb.abs()).max(1e-12);
            let outcome = if ((ea - eb) / scale).abs() <= cfg.tie_tolerance {
                CompareOutcome::Tie
            } else if ea < eb {
                CompareOutcome::WinA
            } else {
                CompareOutcome::WinB
            };
            match outcome {
                CompareOutcome::WinA => wins_a += 1,
                CompareOutcome::Tie => ties += 1,
                CompareOutcome::WinB => wins_b += 1,
            }
            let reliable = rep_a.reliable && rep_b.reliable;
            if !reliable {
                unreliable_rows += 1;
            }
            sum_a += ea;
            sum_b += eb;
            rows.push(CompareRow {
                seed,
                frame,
                err_a: ea,
                err_b: eb,
                outcome,
                reliable,
            });
        }
        per_seed.push(SeedSummary {
            seed,
            mean_a: sum_a / pairs.len() as f64,
            mean_b: sum_b / pairs.len() as f64,
        });
    }
    let mut a_means: Vec<f64> = per_seed.iter().map(|s| s.mean_a).collect();
    let mut b_means: Vec<f64> = per_seed.iter().map(|s| s.mean_b).collect();
    Ok(ComparisonTable {
        rows,
        per_seed,
        wins_a,
        ties,
        wins_b,
        unreliable_rows,
        median_per_seed_a: median(&mut a_means),
        median_per_seed_b: median(&mut b_means),
    })
}

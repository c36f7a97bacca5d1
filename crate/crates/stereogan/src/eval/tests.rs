use super::*;
use crate::data::{synth_generate, Domain, Layer, LayerShape, LayerStyle, Scene, StereoPair};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn flat_style(base: [f32; 3]) -> LayerStyle {
    LayerStyle {
        base,
        shade: 0.0,
        stripe_amp: 0.0,
        stripe_freq: 0.0,
        stripe_angle: 0.0,
        stripe_phase: 0.0,
        noise_amp: 0.0,
        speculars: vec![],
        noise_seed: 0,
    }
}

fn textured_style(base: [f32; 3], seed: u64) -> LayerStyle {
    LayerStyle {
        base,
        shade: 0.3,
        stripe_amp: 0.12,
        stripe_freq: 0.06,
        stripe_angle: 0.7,
        stripe_phase: 1.1,
        noise_amp: 0.1,
        speculars: vec![],
        noise_seed: seed,
    }
}

/// Full-frame textured plane at a uniform integer disparity.
fn uniform_shift_pair(h: usize, w: usize, d: u32) -> StereoPair {
    let scene = Scene {
        layers: vec![
            Layer {
                shape: LayerShape::Rectangle,
                cx: w as f32 / 2.0,
                cy: h as f32 / 2.0,
                rx: w as f32,
                ry: h as f32,
                disparity: 0,
                style: flat_style([0.1, 0.1, 0.1]),
            },
            Layer {
                shape: LayerShape::Rectangle,
                cx: w as f32 / 2.0 + 20.0,
                cy: h as f32 / 2.0,
                rx: w as f32 * 2.0,
                ry: h as f32 * 2.0,
                disparity: d,
                style: textured_style([0.5, 0.45, 0.55], 11),
            },
        ],
    };
    scene.render(h, w).unwrap()
}

#[test]
fn block_matching_recovers_uniform_shifts() {
    for &d in &[2u32, 4, 8] {
        let pair = uniform_shift_pair(48, 96, d);
        let cfg = BlockMatchConfig {
            max_disparity: 10,
            ..BlockMatchConfig::default()
        };
        let map = block_match_disparity(&pair, &cfg).unwrap();
        let mut total = 0usize;
        let mut close = 0usize;
        for (idx, &ok) in map.valid.indexed_iter() {
            if ok {
                total += 1;
                if (map.values[idx] - d as f32).abs() <= 1.0 {
                    close += 1;
                }
            }
        }
        assert!(total > 200, "expected many valid pixels, got {total}");
        let frac = close as f64 / total as f64;
        assert!(frac >= 0.95, "disparity {d}: only {frac:.3} within +/-1 px");
    }
}

#[test]
fn identical_views_give_zero_disparity() {
    let pair = uniform_shift_pair(32, 64, 3);
    let same = StereoPair::new(pair.left.clone(), pair.left.clone(), None).unwrap();
    let cfg = BlockMatchConfig {
        max_disparity: 6,
        ..BlockMatchConfig::default()
    };
    let map = block_match_disparity(&same, &cfg).unwrap();
    assert!(map.valid_fraction() > 0.1);
    for (idx, &ok) in map.valid.indexed_iter() {
        if ok {
            assert_eq!(map.values[idx], 0.0);
        }
    }
}

#[test]
fn flat_images_are_rejected_by_the_variance_gate() {
    let flat = crate::image::Image::constant(3, 32, 64, 0.3).unwrap();
    let pair = StereoPair::new(flat.clone(), flat, None).unwrap();
    let cfg = BlockMatchConfig {
        max_disparity: 6,
        ..BlockMatchConfig::default()
    };
    let map = block_match_disparity(&pair, &cfg).unwrap();
    assert_eq!(map.valid_fraction(), 0.0);
}

#[test]
fn block_match_validates_inputs() {
    let pair = uniform_shift_pair(32, 64, 2);
    let mut cfg = BlockMatchConfig::default();
    cfg.block = 8; // even
    cfg.max_disparity = 6;
    assert!(block_match_disparity(&pair, &cfg).is_err());
    cfg.block = 9;
    cfg.max_disparity = 16; // = w/4
    assert!(block_match_disparity(&pair, &cfg).is_err());
    // Image smaller than the block.
    let tiny = crate::image::Image::zeros(3, 5, 40);
    let tiny_pair = StereoPair::new(tiny.clone(), tiny, None).unwrap();
    cfg.max_disparity = 6;
    assert!(block_match_disparity(&tiny_pair, &cfg).is_err());
}

#[test]
fn zero_disparity_warp_is_identity() {
    let pair = uniform_shift_pair(32, 64, 2);
    let d = DisparityMap::uniform(32, 64, 0.0);
    let (out, mask) = warp_by_disparity(&pair.left, &d).unwrap();
    assert_eq!(out, pair.left);
    assert!(mask.iter().all(|&m| m));
}

#[test]
fn uniform_warp_reconstructs_shifted_pair() {
    let d = 4u32;
    let pair = uniform_shift_pair(48, 96, d);
    let map = DisparityMap::uniform(48, 96, d as f32);
    let (warped, mask) = warp_by_disparity(&pair.right, &map).unwrap();
    // Mask excludes exactly the leftmost `d` columns.
    for (idx, &m) in mask.indexed_iter() {
        assert_eq!(m, idx.1 >= d as usize, "mask wrong at {idx:?}");
    }
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for y in 0..48 {
        for x in d as usize..96 {
            for c in 0..3 {
                sum += (warped.data()[[c, y, x]] as f64 - pair.left.data()[[c, y, x]] as f64).abs();
                n += 1;
            }
        }
    }
    assert!(sum / (n as f64) < 0.02, "mae {}", sum / n as f64);
}

#[test]
fn warp_rejects_mismatched_dims() {
    let img = crate::image::Image::zeros(3, 16, 16);
    let d = DisparityMap::uniform(8, 8, 0.0);
    assert!(warp_by_disparity(&img, &d).is_err());
}

#[test]
fn visibility_marks_pixels_hidden_by_nearer_layers() {
    // Background (d=0) with a foreground band (d=4) at columns [6, 10):
    // background columns [2, 6) land on the same right-view columns as the
    // foreground and are therefore occluded.
    let w = 16usize;
    let mut d = ndarray::Array2::zeros((1, w));
    for x in 6..10 {
        d[[0, x]] = 4.0;
    }
    let vis = visibility_from_disparity(&d);
    for x in 0..w {
        let expect = !(2..6).contains(&x);
        assert_eq!(vis[[0, x]], expect, "column {x}");
    }
}

#[test]
fn self_consistency_is_near_zero_with_ground_truth() {
    let ds = synth_generate(3, Domain::Y, (48, 96), 5, 42).unwrap();
    let cfg = ConsistencyConfig::default();
    for pair in ds.stereo_samples().unwrap() {
        let rep = stereo_consistency_error(pair, pair, &cfg).unwrap();
        assert_eq!(rep.disparity_source, DisparitySource::GroundTruth);
        assert!(rep.reliable);
        assert!(rep.warp_error < 0.02, "self-consistency error {}", rep.warp_error);
    }
}

#[test]
fn noise_output_scores_above_the_noise_floor() {
    let ds = synth_generate(1, Domain::Y, (48, 96), 5, 43).unwrap();
    let pair = &ds.stereo_samples().unwrap()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut noise = Array3::zeros((3, 48, 96));
    for v in noise.iter_mut() {
        *v = rng.random_range(-1.0f32..1.0);
    }
    let output = StereoPair::new(
        pair.left.clone(),
        crate::image::Image::new(noise).unwrap(),
        None,
    )
    .unwrap();
    let rep = stereo_consistency_error(pair, &output, &ConsistencyConfig::default()).unwrap();
    // Noise floor from the value distributions: E|a - b| for independent
    // a ~ image, b ~ U[-1,1] is at least E|b| - E|a| >= 0.5 - mean|a|;
    // estimate it empirically from the actual pixels instead.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let left = pair.left.data();
    let n_px = left.len();
    let mut floor = 0.0f64;
    let samples = 4000;
    for _ in 0..samples {
        let i = rng.random_range(0..n_px);
        let a = left.as_slice().unwrap()[i] as f64;
        let b = rng.random_range(-1.0f64..1.0);
        floor += (a - b).abs();
    }
    floor /= samples as f64;
    assert!(rep.warp_error > 0.2, "error {} not above 0.2", rep.warp_error);
    assert!(
        rep.warp_error > 0.5 * floor,
        "error {} vs estimated floor {floor}",
        rep.warp_error
    );
}

#[test]
fn consistency_reports_are_deterministic() {
    let ds = synth_generate(2, Domain::Y, (32, 64), 4, 44).unwrap();
    let pairs = ds.stereo_samples().unwrap();
    let cfg = ConsistencyConfig::default();
    let r1 = stereo_consistency_error(&pairs[0], &pairs[1], &cfg).unwrap();
    let r2 = stereo_consistency_error(&pairs[0], &pairs[1], &cfg).unwrap();
    assert_eq!(r1, r2);
}

#[test]
fn block_match_then_warp_composes() {
    // Strip the ground truth so the consistency path exercises block
    // matching end to end on a natural synthetic pair.
    let ds = synth_generate(2, Domain::Y, (48, 96), 5, 45).unwrap();
    let cfg = ConsistencyConfig {
        block: BlockMatchConfig {
            max_disparity: 8,
            ..BlockMatchConfig::default()
        },
        ..ConsistencyConfig::default()
    };
    for pair in ds.stereo_samples().unwrap() {
        let stripped = StereoPair::new(pair.left.clone(), pair.right.clone(), None).unwrap();
        let rep = stereo_consistency_error(&stripped, &stripped, &cfg).unwrap();
        assert_eq!(rep.disparity_source, DisparitySource::BlockMatch);
        assert!(rep.reliable, "validity {}", rep.valid_fraction);
        assert!(rep.warp_error < 0.05, "composed error {}", rep.warp_error);
    }
}

#[test]
fn consistency_error_grows_monotonically_with_shift() {
    let ds = synth_generate(1, Domain::Y, (48, 96), 5, 46).unwrap();
    let pair = &ds.stereo_samples().unwrap()[0];
    let cfg = ConsistencyConfig::default();
    let mut last = stereo_consistency_error(pair, pair, &cfg).unwrap().warp_error;
    for k in [1usize, 2, 4, 8] {
        // Shift the output right image horizontally by k pixels.
        let (c, h, w) = pair.right.data().dim();
        let mut shifted = Array3::zeros((c, h, w));
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sx = (x + k).min(w - 1);
                    shifted[[ci, y, x]] = pair.right.data()[[ci, y, sx]];
                }
            }
        }
        let out = StereoPair::new(
            pair.left.clone(),
            crate::image::Image::new(shifted).unwrap(),
            None,
        )
        .unwrap();
        let err = stereo_consistency_error(pair, &out, &cfg).unwrap().warp_error;
        assert!(
            err > last,
            "error not monotone: shift {k} gave {err} after {last}"
        );
        last = err;
    }
}

#[test]
fn aggregation_computes_order_statistics() {
    let mk = |e: f64, reliable: bool| FrameReport {
        warp_error: e,
        valid_fraction: if reliable { 0.8 } else { 0.01 },
        reliable,
        disparity_source: DisparitySource::GroundTruth,
    };
    let rep = aggregate_reports(vec![mk(0.1, true), mk(0.3, true), mk(0.2, true), mk(9.0, false)]).unwrap();
    assert_eq!(rep.unreliable_frames, 1);
    assert!((rep.mean - 0.2).abs() < 1e-12);
    assert!((rep.median - 0.2).abs() < 1e-12);
    assert!(rep.std > 0.0);
    assert!(aggregate_reports(vec![]).is_err());
}

#[test]
fn grid_assembles_rasters() {
    let a = crate::image::Image::constant(3, 8, 8, 0.5).unwrap();
    let b = crate::image::Image::constant(3, 8, 8, -0.5).unwrap();
    let grid = image_grid(&[vec![&a, &b], vec![&b, &a]]).unwrap();
    assert_eq!(grid.height(), 8 * 2 + 2);
    assert_eq!(grid.width(), 8 * 2 + 2);
    let mismatched = crate::image::Image::constant(3, 4, 8, 0.0).unwrap();
    assert!(image_grid(&[vec![&a, &mismatched]]).is_err());
}

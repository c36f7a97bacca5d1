use super::*;
use ndarray::Array3;
use rand::SeedableRng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn noise_image(seed: u64, h: usize, w: usize) -> Image {
    let mut r = rng(seed);
    let mut a = Array3::zeros((3, h, w));
    for v in a.iter_mut() {
        *v = r.random_range(-1.0f32..1.0);
    }
    Image::new(a).unwrap()
}

fn identity_cfg(h: usize, w: usize) -> AugmentConfig {
    AugmentConfig {
        crop_height: h,
        crop_width: w,
        flip_probability: 0.0,
        jitter_min: 1.0,
        jitter_max: 1.0,
        scale_min: 1.0,
    }
}

#[test]
fn identity_augment_path_is_exact() {
    let img = noise_image(1, 16, 32);
    let out = augment_mono(&img, &identity_cfg(16, 32), &mut rng(0)).unwrap();
    assert_eq!(out, img);
}

#[test]
fn stereo_flip_swaps_and_mirrors() {
    let pair = StereoPair::new(noise_image(2, 16, 32), noise_image(3, 16, 32), None).unwrap();
    let mut cfg = identity_cfg(16, 32);
    cfg.flip_probability = 1.0;
    let out = augment_stereo(&pair, &cfg, &mut rng(0)).unwrap();
    // Direct pixel-mirror oracle.
    assert_eq!(out.left, pair.right.mirror_h());
    assert_eq!(out.right, pair.left.mirror_h());
}

#[test]
fn flip_is_involutive_including_disparity() {
    let gt = ndarray::Array2::from_shape_fn((16, 32), |(y, x)| ((x + y) % 5) as f32);
    let pair = StereoPair::new(noise_image(4, 16, 32), noise_image(5, 16, 32), Some(gt)).unwrap();
    let back = flip_stereo(&flip_stereo(&pair));
    assert_eq!(back, pair);
    assert_ne!(flip_stereo(&pair), pair);
}

#[test]
fn constant_image_scales_linearly() {
    let img = Image::constant(3, 16, 32, 0.5).unwrap();
    let mut cfg = identity_cfg(16, 32);
    cfg.jitter_min = 0.8;
    cfg.jitter_max = 0.8;
    let out = augment_mono(&img, &cfg, &mut rng(0)).unwrap();
    for &v in out.data().iter() {
        assert!((v - 0.4).abs() < 1e-6);
    }
}

#[test]
fn augment_is_stereo_coherent_and_bounded() {
    // Identical eyes must stay identical through any draw sequence.
    let img = noise_image(6, 48, 80);
    let pair = StereoPair::new(img.clone(), img, None).unwrap();
    let cfg = AugmentConfig {
        crop_height: 24,
        crop_width: 48,
        ..AugmentConfig::default()
    };
    let mut r = rng(7);
    for _ in 0..20 {
        let out = augment_stereo(&pair, &cfg, &mut r).unwrap();
        assert_eq!(out.left, out.right);
        assert_eq!(out.left.height(), 24);
        assert_eq!(out.left.width(), 48);
        assert!(out.left.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn augment_rejects_too_small_sources() {
    let img = noise_image(8, 16, 16);
    let cfg = identity_cfg(32, 64);
    assert!(augment_mono(&img, &cfg, &mut rng(0)).is_err());
}

#[test]
fn synth_is_deterministic() {
    let a = synth_generate(3, Domain::Y, (32, 64), 4, 99).unwrap();
    let b = synth_generate(3, Domain::Y, (32, 64), 4, 99).unwrap();
    for (pa, pb) in a.stereo_samples().unwrap().iter().zip(b.stereo_samples().unwrap()) {
        assert_eq!(pa, pb);
    }
    let c = synth_generate(3, Domain::Y, (32, 64), 4, 100).unwrap();
    assert_ne!(
        a.stereo_samples().unwrap()[0],
        c.stereo_samples().unwrap()[0]
    );
}

#[test]
fn synth_rejects_bad_parameters() {
    assert!(synth_generate(0, Domain::X, (32, 64), 4, 0).is_err());
    assert!(synth_generate(1, Domain::X, (32, 64), 8, 0).is_err()); // >= w/8
    assert!(synth_generate(1, Domain::X, (30, 64), 4, 0).is_err()); // not /4
}

#[test]
fn full_frame_layer_gives_uniform_disparity() {
    let (h, w) = (32usize, 64usize);
    let mut scene = Scene {
        layers: vec![
            Layer {
                shape: LayerShape::Rectangle,
                cx: w as f32 / 2.0,
                cy: h as f32 / 2.0,
                rx: w as f32,
                ry: h as f32,
                disparity: 0,
                style: LayerStyle {
                    base: [0.2, 0.2, 0.2],
                    shade: 0.0,
                    stripe_amp: 0.0,
                    stripe_freq: 0.0,
                    stripe_angle: 0.0,
                    stripe_phase: 0.0,
                    noise_amp: 0.0,
                    speculars: vec![],
                    noise_seed: 1,
                },
            },
            Layer {
                shape: LayerShape::Rectangle,
                cx: w as f32 / 2.0 + 16.0,
                cy: h as f32 / 2.0,
                rx: w as f32 * 2.0, // covers the full frame even shifted
                ry: h as f32 * 2.0,
                disparity: 4,
                style: LayerStyle {
                    base: [0.5, 0.4, 0.6],
                    shade: 0.0,
                    stripe_amp: 0.1,
                    stripe_freq: 0.07,
                    stripe_angle: 0.4,
                    stripe_phase: 0.2,
                    noise_amp: 0.05,
                    speculars: vec![],
                    noise_seed: 7,
                },
            },
        ],
    };
    let pair = scene.render(h, w).unwrap();
    let gt = pair.disparity_gt.as_ref().unwrap();
    assert!(gt.iter().all(|&v| v == 4.0));
    // Right view is the left view shifted: right(x) = left(x + 4).
    for y in 0..h {
        for x in 0..w - 4 {
            for c in 0..3 {
                assert_eq!(
                    pair.right.data()[[c, y, x]],
                    pair.left.data()[[c, y, x + 4]]
                );
            }
        }
    }
    // A scene without a disparity-0 background is rejected.
    scene.layers.remove(0);
    assert!(scene.render(h, w).is_err());
}

#[test]
fn sample_batch_is_uniform_and_reproducible() {
    let ds = DomainDataset::new_mono(
        Domain::X,
        (0..4).map(|i| Image::constant(3, 8, 8, i as f32 * 0.1).unwrap()).collect(),
    )
    .unwrap();
    // Single-element dataset always yields that element.
    let one = DomainDataset::new_mono(Domain::X, vec![Image::zeros(3, 8, 8)]).unwrap();
    let mut r = rng(0);
    for _ in 0..10 {
        match sample_batch(&one, &mut r) {
            SampleRef::Mono(img) => assert_eq!(img, &Image::zeros(3, 8, 8)),
            _ => unreachable!(),
        }
    }
    // Reproducible sequence.
    let draw_seq = |seed: u64| -> Vec<f32> {
        let mut r = rng(seed);
        (0..50)
            .map(|_| match sample_batch(&ds, &mut r) {
                SampleRef::Mono(img) => img.data()[[0, 0, 0]],
                _ => unreachable!(),
            })
            .collect()
    };
    assert_eq!(draw_seq(3), draw_seq(3));
    // Chi-square style sanity: each of 4 elements within 25% +/- 5% over 10k.
    let mut counts = [0usize; 4];
    let mut r = rng(11);
    for _ in 0..10_000 {
        match sample_batch(&ds, &mut r) {
            SampleRef::Mono(img) => {
                let v = img.data()[[0, 0, 0]];
                counts[(v / 0.1).round() as usize] += 1;
            }
            _ => unreachable!(),
        }
    }
    for &c in &counts {
        let f = c as f64 / 10_000.0;
        assert!((0.20..=0.30).contains(&f), "frequency {f} outside 25% +/- 5%");
    }
}

#[test]
fn load_dataset_pairs_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::create_dir_all(root.join("left")).unwrap();
    std::fs::create_dir_all(root.join("right")).unwrap();
    let a = noise_image(20, 16, 16);
    let b = noise_image(21, 16, 16);
    a.save_png(&root.join("left/a.png")).unwrap();
    b.save_png(&root.join("right/a.png")).unwrap();
    a.save_png(&root.join("left/b.png")).unwrap();
    b.save_png(&root.join("right/b.png")).unwrap();

    let ds = load_dataset(root, DatasetMode::Stereo, Domain::X).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.mode(), DatasetMode::Stereo);

    // Orphan left image is a named error.
    a.save_png(&root.join("left/c.png")).unwrap();
    let err = load_dataset(root, DatasetMode::Stereo, Domain::X).unwrap_err();
    assert!(err.to_string().contains("c.png"), "error should name the orphan: {err}");

    // Mono layout.
    let mono = tempfile::tempdir().unwrap();
    for i in 0..3 {
        noise_image(30 + i, 16, 16).save_png(&mono.path().join(format!("m{i}.png"))).unwrap();
    }
    let ds = load_dataset(mono.path(), DatasetMode::Mono, Domain::Y).unwrap();
    assert_eq!(ds.len(), 3);

    // Empty directory errors.
    let empty = tempfile::tempdir().unwrap();
    assert!(load_dataset(empty.path(), DatasetMode::Mono, Domain::X).is_err());
}

#[test]
fn stereo_pairs_round_trip_through_disk_with_gt() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for sub in ["left", "right", "disparity"] {
        std::fs::create_dir_all(root.join(sub)).unwrap();
    }
    let ds = synth_generate(2, Domain::X, (16, 32), 3, 5).unwrap();
    for (i, pair) in ds.stereo_samples().unwrap().iter().enumerate() {
        pair.left.save_png(&root.join(format!("left/s{i}.png"))).unwrap();
        pair.right.save_png(&root.join(format!("right/s{i}.png"))).unwrap();
        crate::image::save_pfm(pair.disparity_gt.as_ref().unwrap(), &root.join(format!("disparity/s{i}.pfm"))).unwrap();
    }
    let back = load_dataset(root, DatasetMode::Stereo, Domain::X).unwrap();
    let orig = ds.stereo_samples().unwrap();
    let loaded = back.stereo_samples().unwrap();
    assert_eq!(loaded.len(), 2);
    // Disparity survives exactly; images up to 8-bit quantization.
    for (o, l) in orig.iter().zip(loaded) {
        assert_eq!(o.disparity_gt, l.disparity_gt);
        let max_err = o
            .left
            .data()
            .iter()
            .zip(l.left.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 1.0 / 127.5 + 1e-6);
    }
}

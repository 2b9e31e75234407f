mod common;

use common::rng;
use inkdepth::bridge::{
    providers, translators, BridgeContext, ChannelStats, IdentityTranslator, PseudoGtProvider, SampleRef,
    StatsTranslator, SyntheticGtProvider, Translator,
};
use inkdepth::data::io::save_depth;
use inkdepth::data::{DepthMap, ImageTensor};
use inkdepth::scene::{generate_scene, generate_scene_with, BalloonMode};
use inkdepth::Error;
use proptest::prelude::*;
use rand::Rng;

fn image(h: usize, w: usize, lo: f64, hi: f64, seed: u64) -> ImageTensor {
    let mut r = rng(seed);
    ImageTensor::new(h, w, (0..3 * h * w).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

fn reference() -> ChannelStats {
    ChannelStats {
        mean: [0.45, 0.5, 0.55],
        std: [0.12, 0.2, 0.08],
    }
}

fn context(dir: Option<std::path::PathBuf>) -> BridgeContext {
    BridgeContext {
        real_stats: Some(reference()),
        depth_dir: dir,
    }
}

#[test]
fn identity_is_bitwise() {
    let t = IdentityTranslator;
    let img = image(9, 7, 0.0, 1.0, 1);
    let once = t.translate(&img).unwrap();
    assert_eq!(once, img);
    assert_eq!(t.translate(&once).unwrap(), once);
}

#[test]
fn channel_stats_match_direct_computation() {
    let img = image(5, 6, 0.0, 1.0, 2);
    let s = ChannelStats::of(&img);
    for c in 0..3 {
        let v: Vec<f64> = (0..5).flat_map(|y| (0..6).map(move |x| (y, x))).map(|(y, x)| img.get(y, x, c)).collect();
        let mean = v.iter().sum::<f64>() / 30.0;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 30.0;
        assert!((s.mean[c] - mean).abs() < 1e-14);
        assert!((s.std[c] - var.sqrt()).abs() < 1e-14);
    }
}

#[test]
fn stats_translator_hits_reference_means() {
    let t = StatsTranslator { reference: reference() };
    for seed in 0..20 {
        let out = t.translate(&image(32, 32, 0.0, 1.0, seed)).unwrap();
        let s = ChannelStats::of(&out);
        for c in 0..3 {
            assert!((s.mean[c] - reference().mean[c]).abs() <= 0.02, "seed {seed} channel {c}: {}", s.mean[c]);
        }
    }
}

#[test]
fn stats_translator_fixed_point_and_constant_channels() {
    let img = image(16, 16, 0.2, 0.8, 3);
    let t = StatsTranslator {
        reference: ChannelStats::of(&img),
    };
    let out = t.translate(&img).unwrap();
    assert!(out.data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() < 1e-12));

    let flat = ImageTensor::filled(4, 4, [0.1, 0.9, 0.3]).unwrap();
    let t = StatsTranslator { reference: reference() };
    let out = t.translate(&flat).unwrap();
    for c in 0..3 {
        assert!(out.plane(c).iter().all(|&v| (v - reference().mean[c]).abs() < 1e-12));
    }
}

#[test]
fn synthetic_provider_rules() {
    let p = SyntheticGtProvider;
    let empty = generate_scene(4, 24, 24, 0).unwrap();
    let sample = SampleRef {
        stem: "empty",
        image: &empty.image,
        scene: Some(&empty.descriptor),
    };
    assert!(p.estimate(&sample).unwrap().data().iter().all(|&d| d == 1.0));

    let one = generate_scene_with(5, 24, 24, 1, BalloonMode::Never).unwrap();
    let d = p
        .estimate(&SampleRef {
            stem: "one",
            image: &one.image,
            scene: Some(&one.descriptor),
        })
        .unwrap();
    assert!(d.data().iter().all(|&v| v == 1.0 || v == 0.9));
    assert!(d.data().iter().any(|&v| v == 0.9));

    let mut deep = generate_scene_with(6, 24, 24, 9, BalloonMode::Never).unwrap().descriptor;
    let front = deep.layers[0].clone();
    for _ in 0..3 {
        deep.layers.push(front.clone());
    }
    let d = p
        .estimate(&SampleRef {
            stem: "deep",
            image: &one.image,
            scene: Some(&deep),
        })
        .unwrap();
    assert!(d.data().iter().any(|&v| v == 0.1));
    assert!(d.min() >= 0.1);

    let bare = SampleRef {
        stem: "bare",
        image: &one.image,
        scene: None,
    };
    assert!(matches!(p.estimate(&bare), Err(Error::UnsupportedInput(_))));
}

#[test]
fn directory_provider_reads_pfm_by_stem() {
    let dir = tempfile::tempdir().unwrap();
    let depth = DepthMap::new(3, 4, (1..=12).map(|v| v as f64 * 0.25).collect()).unwrap();
    save_depth(&depth, &dir.path().join("panel_01.pfm")).unwrap();
    let p = providers().create("from_directory", &context(Some(dir.path().into()))).unwrap();
    let img = ImageTensor::filled(3, 4, [0.5; 3]).unwrap();
    let got = p
        .estimate(&SampleRef {
            stem: "panel_01",
            image: &img,
            scene: None,
        })
        .unwrap();
    assert_eq!(got, depth);
    let wrong = ImageTensor::filled(4, 3, [0.5; 3]).unwrap();
    let sample = SampleRef {
        stem: "panel_01",
        image: &wrong,
        scene: None,
    };
    assert!(matches!(p.estimate(&sample), Err(Error::Shape(_))));
    let missing = SampleRef {
        stem: "panel_02",
        image: &img,
        scene: None,
    };
    assert!(matches!(p.estimate(&missing), Err(Error::Io { .. })));
}

#[test]
fn registries_resolve_names() {
    assert_eq!(translators().names(), vec!["identity", "stats"]);
    assert_eq!(providers().names(), vec!["from_directory", "synthetic"]);
    assert!(matches!(translators().create("dunit", &context(None)), Err(Error::Config(_))));
    assert!(matches!(
        translators().create("stats", &BridgeContext::default()),
        Err(Error::Config(_))
    ));
    assert!(matches!(providers().create("from_directory", &context(None)), Err(Error::Config(_))));
    for name in translators().names() {
        assert_eq!(translators().create(name, &context(None)).unwrap().name(), name);
    }
    let mut custom = translators();
    custom.register("identity2", |_| Ok(Box::new(IdentityTranslator)));
    assert!(custom.names().contains(&"identity2"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn every_translator_keeps_shape_and_range(seed in any::<u64>(), h in 1usize..20, w in 1usize..20, lo in 0.0f64..0.5) {
        let img = image(h, w, lo, lo + 0.5, seed);
        let reg = translators();
        for name in reg.names() {
            let t = reg.create(name, &context(None)).unwrap();
            let out = t.translate(&img).unwrap();
            prop_assert_eq!((out.height(), out.width()), (h, w));
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn every_provider_output_is_valid_depth(seed in any::<u64>(), n in 0usize..=9) {
        let dir = tempfile::tempdir().unwrap();
        let scene = generate_scene(seed, 16, 20, n).unwrap();
        save_depth(&scene.depth, &dir.path().join("s.pfm")).unwrap();
        let reg = providers();
        for name in reg.names() {
            let p = reg.create(name, &context(Some(dir.path().into()))).unwrap();
            let d = p.estimate(&SampleRef { stem: "s", image: &scene.image, scene: Some(&scene.descriptor) }).unwrap();
            prop_assert_eq!((d.height(), d.width()), (16, 20));
            prop_assert!(d.data().iter().all(|&v| v > 0.0 && v.is_finite()));
            // the PFM copy stores single precision
            prop_assert!(d.data().iter().zip(scene.depth.data()).all(|(a, b)| (a - b).abs() < 1e-6));
        }
    }
}

use inkdepth::scene::{generate_scene, generate_scene_with, layer_depth, BalloonMode, SceneDescriptor};
use inkdepth::Error;
use proptest::prelude::*;

const LEVELS: [f64; 10] = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1];

#[test]
fn layer_rule() {
    for (k, want) in LEVELS.iter().enumerate() {
        assert_eq!(layer_depth(k), *want);
    }
    for k in 10..14 {
        assert_eq!(layer_depth(k), 0.1);
    }
}

#[test]
fn empty_scene_is_uniform() {
    let s = generate_scene(3, 32, 40, 0).unwrap();
    let first = [s.image.get(0, 0, 0), s.image.get(0, 0, 1), s.image.get(0, 0, 2)];
    for y in 0..32 {
        for x in 0..40 {
            for c in 0..3 {
                assert_eq!(s.image.get(y, x, c), first[c]);
            }
        }
    }
    assert!(s.depth.data().iter().all(|&d| d == 1.0));
    assert_eq!(s.mask.count(), 0);
    assert!(s.descriptor.layers.is_empty());
}

#[test]
fn too_many_layers() {
    assert!(matches!(generate_scene(1, 32, 32, 10), Err(Error::Config(_))));
    assert!(generate_scene(1, 32, 32, 9).is_ok());
}

#[test]
fn same_seed_same_scene() {
    let a = generate_scene(77, 48, 48, 5).unwrap();
    let b = generate_scene(77, 48, 48, 5).unwrap();
    assert_eq!(a, b);
    let bits = |s: &[f64]| s.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(a.image.data()), bits(b.image.data()));
    assert_ne!(a.image, generate_scene(78, 48, 48, 5).unwrap().image);
}

#[test]
fn descriptor_round_trips_through_json() {
    let s = generate_scene_with(5, 40, 40, 4, BalloonMode::Always).unwrap();
    let json = serde_json::to_string(&s.descriptor).unwrap();
    let back: SceneDescriptor = serde_json::from_str(&json).unwrap();
    assert_eq!(back.render().unwrap(), s);
    assert_eq!(back.render_depth().unwrap(), s.depth);
}

#[test]
fn provider_floor_for_deep_stacks() {
    // the generator stops at nine layers, but a hand-made descriptor may go deeper
    let s = generate_scene_with(6, 32, 32, 9, BalloonMode::Never).unwrap();
    let mut d = s.descriptor.clone();
    let extra = d.layers[0].clone();
    for _ in 0..3 {
        d.layers.push(extra.clone());
    }
    let depth = d.render_depth().unwrap();
    assert!(depth.data().iter().all(|&v| v >= 0.1));
    assert!(depth.data().iter().any(|&v| v == 0.1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn depth_values_and_occlusion(seed in any::<u64>(), n in 0usize..=9) {
        let s = generate_scene(seed, 32, 32, n).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let d = s.depth.get(y, x);
                prop_assert!(LEVELS.contains(&d));
                let k = LEVELS.iter().position(|&l| l == d).unwrap();
                prop_assert!(k <= n);
                // dropping every layer in front of the owner leaves the pixel as is
                let mut trimmed = s.descriptor.clone();
                trimmed.layers.truncate(k);
                prop_assert_eq!(trimmed.render_depth().unwrap().get(y, x), d);
            }
        }
    }

    #[test]
    fn mask_inside_balloons(seed in any::<u64>(), n in 1usize..=9) {
        let s = generate_scene_with(seed, 40, 48, n, BalloonMode::Always).unwrap();
        let b = s.descriptor.layers.last().unwrap().balloon.unwrap().bbox;
        prop_assert!(s.mask.count() > 0);
        for y in 0..40 {
            for x in 0..48 {
                if s.mask.get(y, x) {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    prop_assert!(px >= b.x0 && px <= b.x1 && py >= b.y0 && py <= b.y1);
                    // balloons sit on the front layer
                    prop_assert_eq!(s.depth.get(y, x), layer_depth(n));
                }
            }
        }
        let none = generate_scene_with(seed, 40, 48, n, BalloonMode::Never).unwrap();
        prop_assert_eq!(none.mask.count(), 0);
    }

    #[test]
    fn geometry_inside_canvas(seed in any::<u64>(), n in 0usize..=9) {
        let s = generate_scene(seed, 30, 50, n).unwrap();
        for l in &s.descriptor.layers {
            let mut boxes = vec![l.bbox];
            boxes.extend(l.balloon.map(|b| b.bbox));
            for b in boxes {
                prop_assert!(b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= 50.0 && b.y1 <= 30.0);
                prop_assert!(b.x0 <= b.x1 && b.y0 <= b.y1);
            }
        }
    }
}

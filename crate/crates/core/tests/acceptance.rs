//! Acceptance gate: one pass/fail line per criterion.

mod common;
mod toy;

use std::f64::consts::{E, LN_2};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use autograd::nn::Conv2d;
use autograd::{Adam, AdamConfig, ConvOpts, Graph, ParamBuilder, ParamStore, Tensor};
use common::{positive_vec, rng};
use inkdepth::context::{laplacian_filter, Block, FeatureMap, LaplacianGating, LocalContext};
use inkdepth::data::io::{load_depth, load_image, save_depth, save_mask};
use inkdepth::data::{AnnotationEntry, DepthMap, ImageTensor, OrderingAnnotation, TextMask};
use inkdepth::eval::{
    abs_rel, align, evaluate, ordering_to_depth, ordinal_accuracy, rmse, rmse_log, sq_rel, AlignmentMode,
};
use inkdepth::feature_gan::FeatureDiscriminator;
use inkdepth::gradients::gradient_suite;
use inkdepth::losses::{adversarial_feature_loss, depth_loss, masked_l1_loss, total_objective, GanMode, LossWeights};
use inkdepth::scene::SceneDescriptor;
use inkdepth::text::{compose_text_adder_target, crop_until_text_ratio, CropOptions};
use inkdepth::train::corpus::{annotation_path, images_dir, list_corpus, scene_path, write_scene_corpus, FixtureOptions};
use inkdepth::train::trainer::epoch_checkpoint_path;
use inkdepth::train::{prepare, train, CacheLayout, LossRow, Predictor, Preset, TrainConfig, Trainer};
use inkdepth::Error;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn map(h: usize, w: usize, v: Vec<f64>) -> DepthMap {
    DepthMap::new(h, w, v).unwrap()
}

fn loss_oracles() -> Outcome {
    let started = Instant::now();
    let mut r = rng(1);
    for i in 0..100 {
        let (h, w) = (r.random_range(1..6), r.random_range(1..6));
        let p = positive_vec(h * w, &mut r);
        let t = positive_vec(h * w, &mut r);
        let lambda = r.random_range(0.0..=1.0);
        let got = depth_loss(&map(h, w, p.clone()), &map(h, w, t.clone()), lambda).unwrap();
        let want = common::depth_loss(&p, &t, lambda);
        ensure!(close(got, want, 1e-9), "depth_loss input {i}: {got} vs {want}");

        let m: Vec<u8> = (0..h * w).map(|_| r.random_range(0..2)).collect();
        let got = masked_l1_loss(&map(h, w, p.clone()), &map(h, w, t.clone()), &TextMask::new(h, w, m.clone()).unwrap())
            .unwrap();
        let want = common::masked_l1(&p, &t, &m);
        ensure!(close(got, want, 1e-9), "masked_l1_loss input {i}: {got} vs {want}");

        let fake: Vec<f64> = (0..r.random_range(1..20)).map(|_| r.random_range(1e-3..0.999)).collect();
        let real: Vec<f64> = (0..r.random_range(1..20)).map(|_| r.random_range(1e-3..0.999)).collect();
        let got = adversarial_feature_loss(&fake, &real).unwrap();
        let want = common::adversarial(&fake, &real);
        ensure!(close(got, want, 1e-9), "adversarial input {i}: {got} vs {want}");

        let w = LossWeights {
            alpha_adv: r.random_range(0.0..1.0),
            alpha_depth: r.random_range(0.0..1.0),
            lambda_si: 0.5,
        };
        let (la, ld) = (r.random_range(-5.0..0.0), r.random_range(0.0..5.0));
        let got = total_objective(la, ld, &w);
        ensure!(close(got, w.alpha_adv * la + w.alpha_depth * ld, 1e-9), "total_objective input {i}");
    }

    let p = map(2, 3, vec![0.3, 1.0, 2.0, 4.0, 0.1, 9.0]);
    ensure!(depth_loss(&p, &p, 0.5).unwrap() == 0.0, "depth_loss of identical maps");
    let pred = map(1, 2, vec![1.0, E]);
    let ones = map(1, 2, vec![1.0, 1.0]);
    ensure!(close(depth_loss(&pred, &ones, 0.5).unwrap(), 0.375, 1e-9), "depth_loss 0.375 example");
    ensure!(
        close(depth_loss(&map(1, 2, vec![3.7, 3.7 * E]), &ones, 1.0).unwrap(), 0.25, 1e-9),
        "depth_loss scaled example"
    );

    let p4 = map(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
    let t4 = map(2, 2, vec![1.0; 4]);
    ensure!(masked_l1_loss(&p4, &t4, &TextMask::full(2, 2).unwrap()).unwrap() == 0.0, "fully masked");
    let mixed = TextMask::new(2, 2, vec![0, 1, 0, 0]).unwrap();
    ensure!(masked_l1_loss(&p4, &t4, &mixed).unwrap() == 1.25, "masked 1.25 example");
    let shifted = map(2, 2, vec![1.5, 2.5, 3.5, 4.5]);
    ensure!(
        close(masked_l1_loss(&shifted, &p4, &TextMask::empty(2, 2).unwrap()).unwrap(), 0.5, 1e-9),
        "unmasked shift example"
    );

    ensure!(close(adversarial_feature_loss(&[0.5; 4], &[0.5; 4]).unwrap(), -2.0 * LN_2, 1e-9), "D = 0.5");
    let v = adversarial_feature_loss(&[1e-7; 3], &[1.0 - 1e-7; 3]).unwrap();
    ensure!(v <= 0.0 && v.abs() < 1e-6, "perfect discriminator gives {v}");
    ensure!(
        matches!(adversarial_feature_loss(&[1.5], &[0.5]), Err(Error::Domain(_))),
        "probability above 1 accepted"
    );

    let w = |a, d| LossWeights {
        alpha_adv: a,
        alpha_depth: d,
        lambda_si: 0.5,
    };
    ensure!(total_objective(-3.0, 0.7, &w(0.0, 2.0)) == 1.4, "depth-only weights");
    ensure!(total_objective(-3.0, 0.7, &w(0.5, 0.0)) == -1.5, "adversarial-only weights");
    ensure!(close(total_objective(-1.386294, 0.375, &w(0.01, 1.0)), 0.361137, 1e-6), "default weights");

    let took = started.elapsed();
    ensure!(took < Duration::from_secs(10), "took {took:?}");
    Ok(format!("400 random inputs and 12 examples within 1e-9 in {took:.1?}"))
}

fn scale_invariance() -> Outcome {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(1..30);
        let p = positive_vec(n, &mut r);
        let t = map(1, n, positive_vec(n, &mut r));
        let base = depth_loss(&map(1, n, p.clone()), &t, 1.0).unwrap();
        for c in [1e-3, 0.5, 7.0, 1e3] {
            let scaled = map(1, n, p.iter().map(|v| v * c).collect());
            worst = worst.max((depth_loss(&scaled, &t, 1.0).unwrap() - base).abs());
        }
    }
    ensure!(worst <= 1e-9, "scaling changed the loss by {worst:e}");
    let mut lowest = f64::INFINITY;
    for lambda in [0.0, 0.5, 1.0] {
        for _ in 0..1000 {
            let n = r.random_range(1..30);
            let p = map(1, n, positive_vec(n, &mut r));
            let t = map(1, n, positive_vec(n, &mut r));
            lowest = lowest.min(depth_loss(&p, &t, lambda).unwrap());
        }
    }
    ensure!(lowest >= 0.0, "negative loss {lowest:e}");
    Ok(format!("max drift {worst:.1e}; min over 3000 losses {lowest:.2e}"))
}

fn gradient_checks() -> Outcome {
    let started = Instant::now();
    let checks = gradient_suite().map_err(|e| e.to_string())?;
    let took = started.elapsed();
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{} {:.2e} > {:.0e}", c.name, c.max_rel_error, c.tolerance))
        .collect();
    ensure!(failed.is_empty(), "{}", failed.join("; "));
    ensure!(took < Duration::from_secs(120), "took {took:?}");
    let worst = checks
        .iter()
        .filter(|c| c.name != "depth_net")
        .map(|c| c.max_rel_error)
        .fold(0.0, f64::max);
    let net = checks.iter().find(|c| c.name == "depth_net").unwrap().max_rel_error;
    Ok(format!(
        "{} checks; worst block/loss {worst:.1e}, network {net:.1e}, {took:.1?}",
        checks.len()
    ))
}

fn structural_identities() -> Outcome {
    for (shape, value) in [([1, 1, 1, 1], 3.0), ([1, 3, 5, 7], -2.5), ([2, 2, 4, 4], 1e6)] {
        let out = laplacian_filter(&FeatureMap::new(Tensor::full(shape.to_vec(), value)).unwrap());
        ensure!(out.data().iter().all(|&v| v == 0.0), "laplacian of constant {value} not zero");
    }
    let mut t = Tensor::zeros([1, 1, 5, 5]);
    t.data_mut()[12] = 1.0;
    let out = laplacian_filter(&FeatureMap::new(t).unwrap());
    let mut expected = vec![0.0; 25];
    expected[12] = -4.0;
    for i in [7, 11, 13, 17] {
        expected[i] = 1.0;
    }
    ensure!(out.data() == &expected[..], "impulse response {:?}", out.data());

    for seed in 0..20 {
        let store = ParamStore::new();
        let mut r = rng(seed);
        let lcm = LocalContext::new(&mut ParamBuilder::new(&store, &mut r), 4, LaplacianGating::OnePlusAbs).unwrap();
        lcm.zero_branches(&store).unwrap();
        let f = FeatureMap::new(common::random_tensor(&[1, 4, 5, 5], -10.0, 10.0, &mut r)).unwrap();
        ensure!(lcm.eval(&store, &f).unwrap() == f, "LCM with zeroed branches is not the identity (seed {seed})");
    }

    let half = vec![0.5; 8];
    let v = adversarial_feature_loss(&half, &half).unwrap();
    ensure!(close(v, -2.0 * LN_2, 1e-9), "adversarial loss at 0.5 is {v}");

    let mut r = rng(4);
    let img = |r: &mut ChaCha8Rng| ImageTensor::new(9, 7, (0..3 * 63).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
    for _ in 0..20 {
        let (a, b) = (img(&mut r), img(&mut r));
        ensure!(compose_text_adder_target(&a, &b, &TextMask::empty(9, 7).unwrap()).unwrap() == a, "M = 0 must give A");
        ensure!(compose_text_adder_target(&a, &b, &TextMask::full(9, 7).unwrap()).unwrap() == b, "M = 1 must give B");
    }
    Ok("laplacian, LCM identity, -2 ln 2 and text adder all exact".into())
}

/// Distinct-coordinate annotation on a `w x h` grid.
fn random_annotation(n: usize, w: u32, h: u32, r: &mut ChaCha8Rng) -> OrderingAnnotation {
    let mut cells: Vec<(u32, u32)> = (0..w).flat_map(|x| (0..h).map(move |y| (x, y))).collect();
    for i in 0..n {
        let j = r.random_range(i..cells.len());
        cells.swap(i, j);
    }
    OrderingAnnotation {
        image_id: "fixture".into(),
        entries: cells[..n]
            .iter()
            .map(|&(x, y)| AnnotationEntry {
                x,
                y,
                l1: r.random_range(1..5),
                l2: r.random_range(1..4),
            })
            .collect(),
    }
}

fn direct_metrics(pred: &[f64], gt: &[f64]) -> [f64; 4] {
    let n = pred.len() as f64;
    let (mut a, mut s, mut q, mut l) = (0.0, 0.0, 0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        a += (p - g).abs() / g;
        s += (p - g) * (p - g) / g;
        q += (p - g) * (p - g);
        l += (p.ln() - g.ln()).powi(2);
    }
    [a / n, s / n, (q / n).sqrt(), (l / n).sqrt()]
}

fn pairwise(pred: &[f64], a: &OrderingAnnotation) -> f64 {
    let (mut ok, mut all) = (0usize, 0usize);
    for i in 0..pred.len() {
        for j in 0..pred.len() {
            let (ri, rj) = (a.entries[i].rank(), a.entries[j].rank());
            if ri < rj {
                all += 1;
                ok += usize::from(pred[i] < pred[j]);
            }
        }
    }
    ok as f64 / all as f64
}

fn metric_oracles() -> Outcome {
    let mut r = rng(5);
    let mut drift: f64 = 0.0;
    for fixture in 0..50 {
        let n = r.random_range(2..40);
        let pred = positive_vec(n, &mut r);
        let gt = positive_vec(n, &mut r);
        let got = [
            abs_rel(&pred, &gt).unwrap(),
            sq_rel(&pred, &gt).unwrap(),
            rmse(&pred, &gt).unwrap(),
            rmse_log(&pred, &gt).unwrap(),
        ];
        let want = direct_metrics(&pred, &gt);
        for k in 0..4 {
            ensure!(close(got[k], want[k], 1e-9), "fixture {fixture} metric {k}: {} vs {}", got[k], want[k]);
        }

        let a = random_annotation(12, 8, 6, &mut r);
        let values: Vec<f64> = (0..12).map(|_| r.random_range(0.1..3.0)).collect();
        if a.entries.iter().any(|e| e.rank() != a.entries[0].rank()) {
            let acc = ordinal_accuracy(&values, &a).unwrap();
            ensure!(close(acc, pairwise(&values, &a), 1e-9), "fixture {fixture} ordinal accuracy");
        }

        // painted prediction
        let ranks = ordering_to_depth(&a).unwrap();
        let mut data: Vec<f64> = (0..48).map(|_| r.random_range(0.1..3.0)).collect();
        for (e, v) in a.entries.iter().zip(&ranks) {
            data[e.y as usize * 8 + e.x as usize] = *v;
        }
        let painted = map(6, 8, data.clone());
        let rep = evaluate(&painted, &a, AlignmentMode::None).unwrap();
        ensure!(
            [rep.abs_rel, rep.sq_rel, rep.rmse, rep.rmse_log] == [0.0; 4],
            "painted fixture {fixture} scored {rep:?}"
        );
        ensure!(rep.ordinal_accuracy.is_none_or(|v| v == 1.0), "painted ordinal {:?}", rep.ordinal_accuracy);

        let noisy = map(6, 8, (0..48).map(|_| r.random_range(0.1..3.0)).collect());
        let base = evaluate(&noisy, &a, AlignmentMode::MedianScale).unwrap();
        for c in [1e-3, 0.5, 7.0, 1e3] {
            let scaled = map(6, 8, noisy.data().iter().map(|v| v * c).collect());
            let s = evaluate(&scaled, &a, AlignmentMode::MedianScale).unwrap();
            for (x, y) in [
                (base.abs_rel, s.abs_rel),
                (base.sq_rel, s.sq_rel),
                (base.rmse, s.rmse),
                (base.rmse_log, s.rmse_log),
            ] {
                drift = drift.max((x - y).abs());
            }
            ensure!(base.ordinal_accuracy == s.ordinal_accuracy, "ordinal changed under scaling");
        }
    }
    ensure!(drift <= 1e-12, "median-scaled metrics drift by {drift:e}");
    Ok(format!("50 fixtures match; scaling drift {drift:.1e}"))
}

/// Replaces every cached text mask with a fixed square.
fn square_masks(c: &TrainConfig) -> TextMask {
    let cache = CacheLayout::new(&c.paths.cache);
    let mut data = vec![0u8; 32 * 32];
    for y in 4..20 {
        for x in 6..22 {
            data[y * 32 + x] = 1;
        }
    }
    let mask = TextMask::new(32, 32, data).unwrap();
    for item in list_corpus(&c.paths.comics_corpus).unwrap() {
        save_mask(&mask, &cache.text_mask(&item.stem)).unwrap();
    }
    mask
}

fn perturb_translated_targets(c: &TrainConfig, mask: &TextMask, r: &mut ChaCha8Rng) {
    let cache = CacheLayout::new(&c.paths.cache);
    for item in list_corpus(&c.paths.comics_corpus).unwrap() {
        let p = cache.translated_gt(&item.stem);
        let d = load_depth(&p).unwrap().map;
        let data = d
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&v, &m)| if m == 1 { r.random_range(0.05..50.0) } else { v })
            .collect();
        save_depth(&map(32, 32, data), &p).unwrap();
    }
}

fn text_mask_independence() -> Outcome {
    let mut r = rng(6);
    for i in 0..100 {
        let n = r.random_range(1..40);
        let pred = positive_vec(n, &mut r);
        let target = positive_vec(n, &mut r);
        let m: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        let moved: Vec<f64> = target
            .iter()
            .zip(&m)
            .map(|(&t, &k)| if k == 1 { r.random_range(0.01..100.0) } else { t })
            .collect();
        let mask = TextMask::new(1, n, m).unwrap();
        let a = masked_l1_loss(&map(1, n, pred.clone()), &map(1, n, target), &mask).unwrap();
        let b = masked_l1_loss(&map(1, n, pred), &map(1, n, moved), &mask).unwrap();
        ensure!(a == b, "input {i}: {a} vs {b}");
    }

    let dir = tempfile::tempdir().unwrap();
    let mut c = toy::toy_setup(dir.path(), 4, 32);
    c.batch_size = 2;
    prepare(&c).map_err(|e| e.to_string())?;
    let mask = square_masks(&c);
    let step = |c: &TrainConfig| -> Vec<LossRow> {
        let mut t = Trainer::new(c.clone()).unwrap();
        (0..2).map(|_| t.next_step().unwrap()).collect()
    };
    let before = step(&c);
    perturb_translated_targets(&c, &mask, &mut r);
    let after = step(&c);
    ensure!(before == after, "logged losses changed: {before:?} vs {after:?}");
    Ok(format!(
        "100 loss inputs and 2 training steps unchanged (l_total {})",
        before[0].l_total
    ))
}

fn crop_procedure() -> Outcome {
    let started = Instant::now();
    let mut r = rng(7);
    let opts = CropOptions::default();
    let (mut found, mut none) = (0, 0);
    for layout in 0..100 {
        let (h, w) = (r.random_range(64..320), r.random_range(64..320));
        let mut data = vec![0u8; h * w];
        for _ in 0..r.random_range(0..6) {
            let (bh, bw) = (r.random_range(4..h / 3), r.random_range(4..w / 3));
            let (y0, x0) = (r.random_range(0..h - bh), r.random_range(0..w - bw));
            for y in y0..y0 + bh {
                for x in x0..x0 + bw {
                    data[y * w + x] = 1;
                }
            }
        }
        let p = r.random_range(0.0..0.02);
        for v in data.iter_mut() {
            if r.random_bool(p) {
                *v = 1;
            }
        }
        let mask = TextMask::new(h, w, data).unwrap();
        let image = ImageTensor::filled(h, w, [0.5, 0.5, 0.5]).unwrap();
        match crop_until_text_ratio(&image, &mask, &CropOptions { seed: layout, ..opts }) {
            Ok((_, rect)) => {
                let mut count = 0;
                for y in rect.top..rect.top + rect.height {
                    for x in rect.left..rect.left + rect.width {
                        count += usize::from(mask.get(y, x));
                    }
                }
                let ratio = count as f64 / (rect.height * rect.width) as f64;
                ensure!(ratio <= 0.03, "layout {layout}: crop {rect:?} has text ratio {ratio}");
                ensure!(rect.top + rect.height <= h && rect.left + rect.width <= w, "crop out of bounds");
                found += 1;
            }
            Err(Error::NoCleanCrop { .. }) => none += 1,
            Err(e) => return Err(format!("layout {layout}: {e}")),
        }
    }
    let all = TextMask::full(100, 100).unwrap();
    let image = ImageTensor::filled(100, 100, [0.5; 3]).unwrap();
    ensure!(
        matches!(crop_until_text_ratio(&image, &all, &opts), Err(Error::NoCleanCrop { .. })),
        "all-text mask produced a crop"
    );
    let took = started.elapsed();
    ensure!(took < Duration::from_secs(30), "took {took:?}");
    Ok(format!("{found} crops verified, {none} layouts without a clean crop, {took:.1?}"))
}

/// Everything criteria 8 and 10 need from one toy run.
struct ToyRun {
    train_time: Duration,
    logs_identical: bool,
    twin_mismatches: Vec<u64>,
    steps: usize,
    per_scene: Vec<(String, f64, Option<f64>)>,
    pooled_rmse: f64,
    mean_ordinal: f64,
    resume_identical: bool,
}

fn toy_pipeline() -> ToyRun {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = root.join("corpus");
    let held = root.join("held_out");
    write_scene_corpus(&corpus, &FixtureOptions { seed: 0, count: 16, size: 64, ..Default::default() }).unwrap();
    write_scene_corpus(&held, &FixtureOptions { seed: 99, count: 4, size: 64, ..Default::default() }).unwrap();

    let mut c = TrainConfig::preset(Preset::Toy);
    assert_eq!((c.epochs, c.loss.alpha_adv), (30, 0.01));
    c.paths.real_corpus = corpus.clone();
    c.paths.comics_corpus = corpus;
    c.paths.cache = root.join("cache");
    c.paths.checkpoints = root.join("checkpoints");
    prepare(&c).unwrap();

    let started = Instant::now();
    let mut trainer = Trainer::new(c.clone()).unwrap();
    let mut twin_mismatches = Vec::new();
    let mut steps = 0;
    let first = trainer
        .run(&mut |t, row| {
            steps += 1;
            if t.net().store().checksum() != t.twin().store().checksum() {
                twin_mismatches.push(row.step);
            }
        })
        .unwrap();
    let train_time = started.elapsed();
    let log_path = c.paths.log_path();
    let first_log = fs::read(&log_path).unwrap();

    let second = train(c.clone(), None).unwrap();
    let logs_identical = fs::read(&log_path).unwrap() == first_log
        && first.to_bytes().unwrap() == second.to_bytes().unwrap();

    let resumed = train(c.clone(), Some(&epoch_checkpoint_path(&c.paths.checkpoints, 20))).unwrap();
    let resume_identical =
        fs::read(&log_path).unwrap() == first_log && resumed.to_bytes().unwrap() == first.to_bytes().unwrap();

    let predictor = Predictor::load(&c.paths.checkpoints.join("latest.ckpt")).unwrap();
    let (per_scene, pooled_rmse, mean_ordinal) = score_held_out(&predictor, &held);
    ToyRun {
        train_time,
        logs_identical,
        twin_mismatches,
        steps,
        per_scene,
        pooled_rmse,
        mean_ordinal,
        resume_identical,
    }
}

fn score_held_out(p: &Predictor, held: &Path) -> (Vec<(String, f64, Option<f64>)>, f64, f64) {
    let (mut sq, mut n) = (0.0, 0usize);
    let mut rows = Vec::new();
    for item in list_corpus(held).unwrap() {
        let image = load_image(&images_dir(held).join(format!("{}.png", item.stem))).unwrap();
        let depth = p.predict(&image, false, false).unwrap();
        let scene: SceneDescriptor =
            serde_json::from_str(&fs::read_to_string(scene_path(held, &item.stem)).unwrap()).unwrap();
        let truth = scene.render_depth().unwrap();
        let aligned = align(depth.data(), truth.data(), AlignmentMode::MedianScale).unwrap();
        let e = rmse(&aligned, truth.data()).unwrap();
        sq += e * e * truth.data().len() as f64;
        n += truth.data().len();
        let ann = OrderingAnnotation::load(&annotation_path(held, &item.stem)).unwrap();
        let report = evaluate(&depth, &ann, AlignmentMode::MedianScale).unwrap();
        rows.push((item.stem.clone(), e, report.ordinal_accuracy));
    }
    let ords: Vec<f64> = rows.iter().filter_map(|r| r.2).collect();
    ((rows), (sq / n as f64).sqrt(), ords.iter().sum::<f64>() / ords.len() as f64)
}

fn toy_end_to_end(run: &ToyRun) -> Outcome {
    let scenes: Vec<String> = run
        .per_scene
        .iter()
        .map(|(s, e, o)| format!("{s} {e:.3}/{:.3}", o.unwrap_or(f64::NAN)))
        .collect();
    ensure!(run.train_time < Duration::from_secs(600), "training took {:?}", run.train_time);
    ensure!(run.logs_identical, "two runs with the same seed logged different losses");
    ensure!(run.pooled_rmse < 0.15, "RMSE {:.4} [{}]", run.pooled_rmse, scenes.join(", "));
    ensure!(run.mean_ordinal >= 0.9, "ordinal {:.4} [{}]", run.mean_ordinal, scenes.join(", "));
    Ok(format!(
        "RMSE {:.4}, ordinal {:.4} on 4 held-out scenes [{}]; train {:.0?}; repeat run identical",
        run.pooled_rmse,
        run.mean_ordinal,
        scenes.join(", "),
        run.train_time
    ))
}

fn noisy(shape: &[usize], mean: f64, r: &mut ChaCha8Rng) -> Tensor {
    let n = Normal::new(mean, 0.1).unwrap();
    Tensor::from_fn(shape.to_vec(), |_| n.sample(r))
}

fn adam(store: &ParamStore, lr: f64) -> Adam {
    Adam::new(AdamConfig { lr, ..AdamConfig::default() }, store)
}

fn accuracy(d: &FeatureDiscriminator, r: &mut ChaCha8Rng) -> f64 {
    let real = FeatureMap::new(noisy(&[50, 4, 8, 8], 1.0, r)).unwrap();
    let fake = FeatureMap::new(noisy(&[50, 4, 8, 8], 0.0, r)).unwrap();
    let pr = d.discriminate(&real).unwrap();
    let pf = d.discriminate(&fake).unwrap();
    let ok = pr.data().iter().filter(|&&p| p > 0.5).count() + pf.data().iter().filter(|&&p| p <= 0.5).count();
    ok as f64 / 100.0
}

fn gan_sanity() -> Outcome {
    let d = FeatureDiscriminator::new(4, 10).unwrap();
    let mut opt = adam(d.store(), 1e-3);
    let mut r = rng(11);
    let mut probe = rng(12);
    let mut reached = None;
    for step in 1..=200 {
        d.discriminator_phase(&mut opt, &noisy(&[4, 4, 8, 8], 1.0, &mut r), &noisy(&[4, 4, 8, 8], 0.0, &mut r))
            .unwrap();
        if step % 10 == 0 && accuracy(&d, &mut probe) > 0.95 {
            reached = Some(step);
            break;
        }
    }
    let reached = reached.ok_or("separable features not separated within 200 steps")?;

    // phase isolation with a one-layer encoder
    let enc_store = ParamStore::new();
    let conv = Conv2d::new(&mut ParamBuilder::new(&enc_store, &mut rng(13)), 3, 4, 3, ConvOpts::same(3, 1), true);
    let d2 = FeatureDiscriminator::new(4, 14).unwrap();
    let (mut d_opt, mut e_opt) = (adam(d2.store(), 1e-2), adam(&enc_store, 1e-2));
    let mut r = rng(15);
    for step in 0..50 {
        let real_img = common::random_tensor(&[2, 3, 8, 8], 0.0, 1.0, &mut r);
        let fake_img = common::random_tensor(&[2, 3, 8, 8], 0.0, 1.0, &mut r);
        let feats = |g: &mut Graph, x: &Tensor| {
            let x = g.constant(x.clone());
            conv.forward(g, &enc_store, x).unwrap()
        };
        let enc_before = enc_store.checksum();
        let mut g = Graph::new();
        let (fr, ff) = (feats(&mut g, &real_img), feats(&mut g, &fake_img));
        d2.discriminator_phase(&mut d_opt, g.value(fr), g.value(ff)).unwrap();
        ensure!(enc_store.checksum() == enc_before, "discriminator phase moved the encoder at step {step}");
        let d_mid = d2.store().checksum();
        let mut g = Graph::new();
        let ff = feats(&mut g, &fake_img);
        let loss = d2.generator_loss(&mut g, ff, GanMode::Minimax).unwrap();
        let grads = g.backward(loss).for_store(&g, &enc_store);
        e_opt.step(&enc_store, &grads).unwrap();
        ensure!(d2.store().checksum() == d_mid, "generator phase moved the discriminator at step {step}");
    }

    let d3 = FeatureDiscriminator::new(4, 16).unwrap();
    let mut opt = adam(d3.store(), 1e-3);
    let mut r = rng(17);
    for _ in 0..500 {
        d3.discriminator_phase(&mut opt, &noisy(&[4, 4, 8, 8], 0.5, &mut r), &noisy(&[4, 4, 8, 8], 0.5, &mut r))
            .unwrap();
    }
    let p = d3.discriminate(&FeatureMap::new(noisy(&[64, 4, 8, 8], 0.5, &mut r)).unwrap()).unwrap();
    let mean = p.sum() / p.numel() as f64;
    ensure!((0.4..=0.6).contains(&mean), "mean output {mean} on identical distributions");
    Ok(format!(
        "accuracy > 0.95 after {reached} steps; 50 isolated steps; identical-feature mean {mean:.3}"
    ))
}

fn twin_sharing(run: &ToyRun) -> Outcome {
    ensure!(run.twin_mismatches.is_empty(), "checksums differ at steps {:?}", run.twin_mismatches);
    ensure!(run.steps > 0, "no steps ran");
    ensure!(run.resume_identical, "resuming from epoch 20 did not reproduce the log");
    Ok(format!("{} steps with equal checksums; resume from epoch 20 identical", run.steps))
}

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {n:>2} {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {n:>2} {name} ({secs:.1}s): {detail}");
            }
        }
    };
    report(1, "loss oracles", &mut loss_oracles);
    report(2, "scale invariance", &mut scale_invariance);
    report(3, "gradient checks", &mut gradient_checks);
    report(4, "structural identities", &mut structural_identities);
    report(5, "metric oracles", &mut metric_oracles);
    report(6, "text-mask independence", &mut text_mask_independence);
    report(7, "crop procedure", &mut crop_procedure);
    let run = catch_unwind(toy_pipeline).map_err(|_| "toy pipeline panicked".to_string());
    report(8, "toy end-to-end", &mut || run.as_ref().map_err(Clone::clone).and_then(toy_end_to_end));
    report(9, "GAN sanity", &mut gan_sanity);
    report(10, "twin sharing", &mut || run.as_ref().map_err(Clone::clone).and_then(twin_sharing));
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}

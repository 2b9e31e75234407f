//! Finite-difference gradient checks over every trainable block and loss.

use autograd::{Graph, ParamBuilder, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::context::{Block, ChannelAttention, GlobalContext, LaplacianGating, LocalContext, SpatialAttention, AsppConfig};
use crate::data::ImageTensor;
use crate::depth_net::{DepthNet, DepthNetConfig};
use crate::error::Result;
use crate::feature_gan::FeatureDiscriminator;
use crate::losses::{
    adversarial_var, depth_loss_log, depth_loss_var, generator_var, gradcheck, masked_l1_var, GanMode, LossWeights,
};
use crate::text::{SegmenterConfig, TextSegmenter};

/// Tolerance for single blocks and losses.
pub const BLOCK_TOLERANCE: f64 = 1e-4;
/// Tolerance for the composed depth network.
pub const NETWORK_TOLERANCE: f64 = 1e-3;
const STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(lo..hi))
}

/// Random values for every parameter whose name ends with one of
/// `suffixes`, so zero-initialized parts do not hide gradients.
fn randomize(store: &ParamStore, suffixes: &[&str], scale: f64, seed: u64) -> Result<()> {
    let mut r = rng(seed);
    for name in store.names() {
        if suffixes.iter().any(|s| name.ends_with(s)) {
            let id = store.find(&name).expect("listed name");
            store.set(id, uniform(&store.shape(id), -scale, scale, &mut r))?;
        }
    }
    Ok(())
}

/// `sum(block(x) * proj)` with the input stored beside the parameters.
fn block_check(name: &str, store: &ParamStore, block: &dyn Block, seed: u64) -> Result<GradCheck> {
    randomize(store, &["bias"], 0.5, seed)?;
    let mut r = rng(seed + 1);
    let input = store.add("input", uniform(&[1, 4, 6, 6], -1.0, 1.0, &mut r));
    let proj = uniform(&[1, 4, 6, 6], -1.0, 1.0, &mut r);
    let err = gradcheck(store, STEP, |g| {
        let x = g.param(store, input);
        let y = block.forward(g, store, x)?;
        let p = g.constant(proj.clone());
        let y = g.mul(y, p)?;
        Ok(g.sum(y))
    })?;
    Ok(GradCheck {
        name: name.into(),
        max_rel_error: err,
        tolerance: BLOCK_TOLERANCE,
    })
}

fn loss_check(name: &str, store: &ParamStore, loss: impl FnMut(&mut Graph) -> Result<Var>) -> Result<GradCheck> {
    Ok(GradCheck {
        name: name.into(),
        max_rel_error: gradcheck(store, STEP, loss)?,
        tolerance: BLOCK_TOLERANCE,
    })
}

fn image(h: usize, w: usize, seed: u64) -> ImageTensor {
    let mut r = rng(seed);
    ImageTensor::new(h, w, (0..3 * h * w).map(|_| r.random_range(0.0..1.0)).collect()).expect("in range")
}

/// Runs every check. Deterministic; takes a few seconds.
pub fn gradient_suite() -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    let c = 4;

    let store = ParamStore::new();
    let mut r = rng(1);
    let sa = SpatialAttention::new(
        &mut ParamBuilder::new(&store, &mut r),
        c,
        AsppConfig::for_channels(c),
        LaplacianGating::OnePlusAbs,
    )?;
    out.push(block_check("spatial_attention", &store, &sa, 2)?);

    let store = ParamStore::new();
    let ca = ChannelAttention::new(&mut ParamBuilder::new(&store, &mut rng(3)), c);
    out.push(block_check("channel_attention", &store, &ca, 4)?);

    let store = ParamStore::new();
    let lcm = LocalContext::new(&mut ParamBuilder::new(&store, &mut rng(5)), c, LaplacianGating::OnePlusAbs)?;
    out.push(block_check("local_context", &store, &lcm, 6)?);

    let store = ParamStore::new();
    let gcm = GlobalContext::new(&mut ParamBuilder::new(&store, &mut rng(7)), c);
    out.push(block_check("global_context", &store, &gcm, 8)?);

    let net = DepthNet::new(
        DepthNetConfig {
            levels: 2,
            base_channels: 4,
            ..DepthNetConfig::default()
        },
        9,
    )?;
    randomize(net.store(), &["head.weight"], 0.3, 10)?;
    let img = image(16, 16, 11);
    let target = uniform(&[1, 1, 16, 16], -0.5, 0.5, &mut rng(12));
    out.push(GradCheck {
        name: "depth_net".into(),
        max_rel_error: gradcheck(net.store(), STEP, |g| {
            let x = g.constant(img.to_tensor());
            let o = net.forward_graph(g, x)?;
            let t = g.constant(target.clone());
            depth_loss_log(g, o.log_depth, t, 0.5)
        })?,
        tolerance: NETWORK_TOLERANCE,
    });

    let d = FeatureDiscriminator::new(c, 13)?;
    randomize(d.store(), &["head.weight", "head.bias"], 0.5, 14)?;
    let mut r = rng(15);
    let f = uniform(&[1, c, 8, 8], -1.0, 1.0, &mut r);
    let proj = uniform(&[1, 1, 1, 1], 0.5, 1.0, &mut r);
    out.push(loss_check("discriminator", d.store(), |g| {
        let x = g.constant(f.clone());
        let p = d.forward_graph(g, x, false)?;
        let k = g.constant(proj.clone());
        let y = g.mul(p, k)?;
        Ok(g.sum(y))
    })?);

    let seg = TextSegmenter::new(
        SegmenterConfig {
            base_channels: 2,
            ..SegmenterConfig::default()
        },
        16,
    )?;
    randomize(seg.store(), &["head.weight"], 0.5, 17)?;
    let img = image(8, 12, 18);
    let mut r = rng(19);
    let mask = Tensor::from_fn([1, 1, 8, 12], |_| f64::from(u8::from(r.random_bool(0.3))));
    out.push(loss_check("segmenter", seg.store(), |g| {
        let x = g.constant(img.to_tensor());
        seg.loss_graph(g, x, &mask)
    })?);

    let mut r = rng(20);
    let store = ParamStore::new();
    let pred = store.add("pred", uniform(&[1, 1, 3, 3], 0.1, 5.0, &mut r));
    let target = uniform(&[1, 1, 3, 3], 0.1, 5.0, &mut r);
    out.push(loss_check("depth_loss", &store, |g| {
        let p = g.param(&store, pred);
        let t = g.constant(target.clone());
        depth_loss_var(g, p, t, 0.5)
    })?);
    let keep = Tensor::from_fn([1, 1, 3, 3], |i| f64::from(u8::from(i % 3 != 0)));
    out.push(loss_check("masked_l1_loss", &store, |g| {
        let p = g.param(&store, pred);
        let t = g.constant(target.clone());
        let k = g.constant(keep.clone());
        masked_l1_var(g, p, t, k)
    })?);

    let store = ParamStore::new();
    let fake = store.add("fake", uniform(&[1, 1, 2, 2], 0.05, 0.95, &mut r));
    let real = store.add("real", uniform(&[1, 1, 2, 2], 0.05, 0.95, &mut r));
    out.push(loss_check("adversarial_loss", &store, |g| {
        let (f, re) = (g.param(&store, fake), g.param(&store, real));
        adversarial_var(g, f, re)
    })?);
    for (name, mode) in [
        ("generator_minimax", GanMode::Minimax),
        ("generator_non_saturating", GanMode::NonSaturating),
    ] {
        out.push(loss_check(name, &store, |g| {
            let f = g.param(&store, fake);
            Ok(generator_var(g, f, mode))
        })?);
    }

    let w = LossWeights::default();
    let store2 = ParamStore::new();
    let pred2 = store2.add("pred", uniform(&[1, 1, 3, 3], 0.1, 5.0, &mut r));
    let fake2 = store2.add("fake", uniform(&[1, 1, 2, 2], 0.05, 0.95, &mut r));
    let real2 = uniform(&[1, 1, 2, 2], 0.05, 0.95, &mut r);
    out.push(loss_check("total_objective", &store2, |g| {
        let p = g.param(&store2, pred2);
        let t = g.constant(target.clone());
        let depth = depth_loss_var(g, p, t, w.lambda_si)?;
        let f = g.param(&store2, fake2);
        let re = g.constant(real2.clone());
        let adv = adversarial_var(g, f, re)?;
        let depth = g.mul_scalar(depth, w.alpha_depth);
        let adv = g.mul_scalar(adv, w.alpha_adv);
        Ok(g.add(depth, adv)?)
    })?);
    Ok(out)
}

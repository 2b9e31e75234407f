//! Training objectives, in plain form over domain types and as graph ops,
//! plus the finite-difference gradient checker.

use autograd::{Graph, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::{ensure_same_dims, DepthMap, TextMask};
use crate::error::{Error, Result};

/// Discriminator outputs are clamped to `[P_MIN, 1 - P_MIN]` before logs.
pub const P_MIN: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha_adv: f64,
    pub alpha_depth: f64,
    /// Coefficient of the squared-mean term of the log loss; 1 gives full
    /// scale invariance.
    pub lambda_si: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_adv: 0.01,
            alpha_depth: 1.0,
            lambda_si: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.alpha_adv) || !ok(self.alpha_depth) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if self.alpha_adv == 0.0 && self.alpha_depth == 0.0 {
            return Err(Error::Config("alpha_adv and alpha_depth cannot both be zero".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_si) {
            return Err(Error::Config(format!("lambda_si {} outside [0, 1]", self.lambda_si)));
        }
        Ok(())
    }
}

/// Generator-side adversarial objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanMode {
    /// Minimize `E[log(1 - D(f))]`.
    #[default]
    Minimax,
    /// Minimize `-E[log D(f)]`.
    NonSaturating,
}

/// Scale-invariant log loss: `mean(d^2) - lambda * mean(d)^2` with
/// `d = log pred - log target`.
pub fn depth_loss(pred: &DepthMap, target: &DepthMap, lambda_si: f64) -> Result<f64> {
    ensure_same_dims("depth_loss", pred, target)?;
    let n = pred.data().len() as f64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = p.ln() - t.ln();
        sum += d;
        sum_sq += d * d;
    }
    Ok(sum_sq / n - lambda_si * (sum / n) * (sum / n))
}

/// `mean((1 - M) * |pred - target|)` over all pixels.
pub fn masked_l1_loss(pred: &DepthMap, target: &DepthMap, mask: &TextMask) -> Result<f64> {
    ensure_same_dims("masked_l1_loss", pred, target)?;
    ensure_same_dims("masked_l1_loss", pred, mask)?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .zip(mask.data())
        .filter(|(_, &m)| m == 0)
        .map(|((p, t), _)| (p - t).abs())
        .sum();
    Ok(total / pred.data().len() as f64)
}

/// `mean(log(1 - p_translated)) + mean(log(p_real))`, with probabilities
/// clamped to `[P_MIN, 1 - P_MIN]`.
pub fn adversarial_feature_loss(d_out_translated: &[f64], d_out_real: &[f64]) -> Result<f64> {
    let check = |name: &str, ps: &[f64]| -> Result<()> {
        if ps.is_empty() {
            return Err(Error::Domain(format!("no {name} discriminator outputs")));
        }
        match ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            Some(p) => Err(Error::Domain(format!("{name} probability {p} outside [0, 1]"))),
            None => Ok(()),
        }
    };
    check("translated", d_out_translated)?;
    check("real", d_out_real)?;
    let clamp = |p: f64| p.clamp(P_MIN, 1.0 - P_MIN);
    let fake: f64 = d_out_translated.iter().map(|&p| (1.0 - clamp(p)).ln()).sum::<f64>()
        / d_out_translated.len() as f64;
    let real: f64 = d_out_real.iter().map(|&p| clamp(p).ln()).sum::<f64>() / d_out_real.len() as f64;
    Ok(fake + real)
}

pub fn total_objective(l_adv: f64, l_depth: f64, w: &LossWeights) -> f64 {
    w.alpha_adv * l_adv + w.alpha_depth * l_depth
}

/// Graph form of [`depth_loss`] on log-depths `[N, 1, H, W]`, averaged over
/// the batch.
pub fn depth_loss_log(g: &mut Graph, log_pred: Var, log_target: Var, lambda_si: f64) -> Result<Var> {
    let d = g.sub(log_pred, log_target)?;
    let sq = g.square(d);
    let first = g.mean_spatial(sq)?;
    let mean = g.mean_spatial(d)?;
    let second = g.square(mean);
    let second = g.mul_scalar(second, lambda_si);
    let per_image = g.sub(first, second)?;
    Ok(g.mean(per_image))
}

/// Graph form of [`depth_loss`] on depths.
pub fn depth_loss_var(g: &mut Graph, pred: Var, target: Var, lambda_si: f64) -> Result<Var> {
    let lp = g.log(pred);
    let lt = g.log(target);
    depth_loss_log(g, lp, lt, lambda_si)
}

/// Graph form of [`masked_l1_loss`]; `keep` is `1 - M`.
pub fn masked_l1_var(g: &mut Graph, pred: Var, target: Var, keep: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let d = g.abs(d);
    let d = g.mul(d, keep)?;
    Ok(g.mean(d))
}

fn log_one_minus(g: &mut Graph, p: Var) -> Var {
    let q = g.neg(p);
    let q = g.add_scalar(q, 1.0);
    g.log(q)
}

/// Graph form of [`adversarial_feature_loss`] on already-clamped
/// probabilities.
pub fn adversarial_var(g: &mut Graph, p_translated: Var, p_real: Var) -> Result<Var> {
    let fake = log_one_minus(g, p_translated);
    let fake = g.mean(fake);
    let real = g.log(p_real);
    let real = g.mean(real);
    Ok(g.add(fake, real)?)
}

/// What the encoder minimizes given the discriminator's opinion of the
/// translated-branch features.
pub fn generator_var(g: &mut Graph, p_translated: Var, mode: GanMode) -> Var {
    match mode {
        GanMode::Minimax => {
            let l = log_one_minus(g, p_translated);
            g.mean(l)
        }
        GanMode::NonSaturating => {
            let l = g.log(p_translated);
            let l = g.mean(l);
            g.neg(l)
        }
    }
}

/// Compares the analytic gradient of `loss` with respect to every entry of
/// `store` against central differences with step `step`. Returns the worst
/// `|g_an - g_fd| / max(|g_an|, |g_fd|, 1e-8)`.
///
/// `loss` must bind the parameters it uses through `Graph::param`.
pub fn gradcheck(
    store: &ParamStore,
    step: f64,
    mut loss: impl FnMut(&mut Graph) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let l = loss(&mut g)?;
    if !g.value(l).item().is_finite() {
        return Err(Error::Numerical { layer: "loss".into() });
    }
    let grads = g.backward(l);
    let analytic: Vec<f64> = grads
        .for_store(&g, store)
        .into_iter()
        .flat_map(Tensor::into_data)
        .collect();
    drop(g);

    let mut value = || -> Result<f64> {
        let mut g = Graph::new();
        let l = loss(&mut g)?;
        let v = g.value(l).item();
        if !v.is_finite() {
            return Err(Error::Numerical { layer: "loss".into() });
        }
        Ok(v)
    };
    let base = store.flatten();
    let mut theta = base.clone();
    let mut worst: f64 = 0.0;
    for (i, an) in analytic.iter().enumerate() {
        theta[i] = base[i] + step;
        store.assign_flat(&theta)?;
        let plus = value();
        theta[i] = base[i] - step;
        store.assign_flat(&theta)?;
        let minus = value();
        theta[i] = base[i];
        let (plus, minus) = match (plus, minus) {
            (Ok(p), Ok(m)) => (p, m),
            (Err(e), _) | (_, Err(e)) => {
                store.assign_flat(&base)?;
                return Err(e);
            }
        };
        let fd = (plus - minus) / (2.0 * step);
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    store.assign_flat(&base)?;
    Ok(worst)
}

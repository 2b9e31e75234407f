//! Patch discriminator over bottleneck features and the two-phase
//! adversarial update.

use autograd::nn::Conv2d;
use autograd::{Adam, ConvOpts, Graph, ParamBuilder, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::context::FeatureMap;
use crate::error::{Error, Result};
use crate::losses::{adversarial_var, generator_var, GanMode, P_MIN};

const LEAK: f64 = 0.2;

/// Three stride-2 convolutions with leaky ReLU and a 1x1 sigmoid head.
#[derive(Clone, Debug)]
pub struct FeatureDiscriminator {
    channels: usize,
    store: ParamStore,
    convs: Vec<Conv2d>,
    head: Conv2d,
}

impl FeatureDiscriminator {
    /// He-normal convolutions; the head starts at zero so every output is
    /// exactly 0.5.
    pub fn new(channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("discriminator needs at least one channel".into()));
        }
        let hidden = channels.max(8);
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&store, &mut rng);
        let convs = (0..3)
            .map(|i| {
                let cin = if i == 0 { channels } else { hidden };
                Conv2d::new(&mut pb.sub(&format!("conv{i}")), cin, hidden, 3, ConvOpts::strided(3, 2), true)
            })
            .collect();
        let head = Conv2d::new(&mut pb.sub("head"), hidden, 1, 1, ConvOpts::default(), true);
        store.set(head.weight, Tensor::zeros(store.shape(head.weight)))?;
        Ok(Self {
            channels,
            store,
            convs,
            head,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Clamped probabilities `[N, 1, H/8, W/8]` (rounded up). With `frozen`
    /// the parameters enter the graph as constants.
    pub fn forward_graph(&self, g: &mut Graph, x: Var, frozen: bool) -> Result<Var> {
        let c = g.shape(x).get(1).copied().unwrap_or(0);
        if g.shape(x).len() != 4 || c != self.channels {
            return Err(Error::Shape(format!(
                "discriminator expects {} channels, got shape {:?}",
                self.channels,
                g.shape(x)
            )));
        }
        let layer = |g: &mut Graph, conv: &Conv2d, x: Var| {
            if frozen {
                conv.forward_frozen(g, &self.store, x)
            } else {
                conv.forward(g, &self.store, x)
            }
        };
        let mut y = x;
        for conv in &self.convs {
            let z = layer(g, conv, y)?;
            y = g.leaky_relu(z, LEAK);
        }
        let logits = layer(g, &self.head, y)?;
        let p = g.sigmoid(logits);
        Ok(g.clamp(p, P_MIN, 1.0 - P_MIN))
    }

    /// Per-location realness probabilities.
    pub fn discriminate(&self, f: &FeatureMap) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(f.tensor().clone());
        let p = self.forward_graph(&mut g, x, true)?;
        Ok(g.value(p).clone())
    }

    /// One optimizer step pushing the discriminator to tell `f_real` from
    /// `f_translated`. Returns the adversarial loss before the update.
    pub fn discriminator_phase(&self, opt: &mut Adam, f_real: &Tensor, f_translated: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let real = g.constant(f_real.clone());
        let fake = g.constant(f_translated.clone());
        let p_real = self.forward_graph(&mut g, real, false)?;
        let p_fake = self.forward_graph(&mut g, fake, false)?;
        let loss = adversarial_var(&mut g, p_fake, p_real)?;
        let d_loss = g.value(loss).item();
        if !d_loss.is_finite() {
            return Err(Error::Numerical { layer: "discriminator".into() });
        }
        let ascent = g.neg(loss);
        let grads = g.backward(ascent).for_store(&g, &self.store);
        opt.step(&self.store, &grads)?;
        Ok(d_loss)
    }

    /// Generator-side loss on translated-branch features, with the
    /// discriminator frozen.
    pub fn generator_loss(&self, g: &mut Graph, f_translated: Var, mode: GanMode) -> Result<Var> {
        let p = self.forward_graph(g, f_translated, true)?;
        Ok(generator_var(g, p, mode))
    }
}

/// Losses reported by [`adversarial_step`], each taken before its update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdversarialLosses {
    pub d_loss: f64,
    pub g_loss: f64,
}

/// One discriminator step on detached features, then one encoder step on
/// the generator objective with the discriminator frozen.
///
/// `features` builds `(f_real, f_translated)` in the given graph from the
/// encoder parameters in `encoder`; it is called once per phase.
pub fn adversarial_step(
    d: &FeatureDiscriminator,
    d_opt: &mut Adam,
    encoder: &ParamStore,
    enc_opt: &mut Adam,
    mode: GanMode,
    features: &mut dyn FnMut(&mut Graph) -> Result<(Var, Var)>,
) -> Result<AdversarialLosses> {
    let mut g = Graph::new();
    let (real, fake) = features(&mut g)?;
    let d_loss = d.discriminator_phase(d_opt, g.value(real), g.value(fake))?;

    let mut g = Graph::new();
    let (_, fake) = features(&mut g)?;
    let loss = d.generator_loss(&mut g, fake, mode)?;
    let g_loss = g.value(loss).item();
    if !g_loss.is_finite() {
        return Err(Error::Numerical { layer: "generator".into() });
    }
    let grads = g.backward(loss).for_store(&g, encoder);
    enc_opt.step(encoder, &grads)?;
    Ok(AdversarialLosses { d_loss, g_loss })
}

//! Trainable layers built from graph ops.

use rand::Rng;

use crate::conv::ConvOpts;
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamBuilder, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub opts: ConvOpts,
}

impl Conv2d {
    /// He-normal weights, zero bias.
    pub fn new<R: Rng>(
        pb: &mut ParamBuilder<'_, R>,
        cin: usize,
        cout: usize,
        k: usize,
        opts: ConvOpts,
        bias: bool,
    ) -> Self {
        let weight = pb.he_normal("weight", &[cout, cin, k, k], cin * k * k);
        let bias = bias.then(|| pb.constant("bias", &[cout], 0.0));
        Self { weight, bias, opts }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.opts)
    }

    /// Same computation with the parameters read as constants.
    pub fn forward_frozen(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.frozen_param(store, self.weight);
        let b = self.bias.map(|b| g.frozen_param(store, b));
        g.conv2d(x, w, b, self.opts)
    }

    pub fn out_channels(&self, store: &ParamStore) -> usize {
        store.shape(self.weight)[0]
    }
}

/// Group normalization with per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub groups: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl GroupNorm {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, channels: usize) -> Self {
        Self {
            groups: default_groups(channels),
            gamma: pb.constant("gamma", &[1, channels, 1, 1], 1.0),
            beta: pb.constant("beta", &[1, channels, 1, 1], 0.0),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = g.group_norm(x, self.groups, self.eps)?;
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let y = g.mul(y, gamma)?;
        g.add(y, beta)
    }
}

/// Largest divisor of `channels` not exceeding 8.
pub fn default_groups(channels: usize) -> usize {
    (1..=channels.min(8)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

//! Attention building blocks: the Laplacian edge operator, the ASPP spatial
//! branch, the channel branch, and the local and global context modules.

use autograd::nn::Conv2d;
use autograd::{ConvOpts, Graph, ParamBuilder, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Batched NCHW activation with finite values and non-empty extent.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    tensor: Tensor,
}

impl FeatureMap {
    pub fn new(tensor: Tensor) -> Result<Self> {
        let (n, c, h, w) = tensor.dims4()?;
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("empty feature map {:?}", tensor.shape())));
        }
        if !tensor.is_finite() {
            return Err(Error::Domain("feature map has non-finite values".into()));
        }
        Ok(Self { tensor })
    }

    /// Single-sample map from channel-major data.
    pub fn from_chw(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Tensor::new([1, c, h, w], data)?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }
}

/// A trainable module mapping one NCHW tensor to another.
pub trait Block {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var>;

    /// Forward pass outside of any training graph.
    fn eval(&self, store: &ParamStore, f: &FeatureMap) -> Result<FeatureMap> {
        let mut g = Graph::new();
        let x = g.constant(f.tensor().clone());
        let y = self.forward(&mut g, store, x)?;
        FeatureMap::new(g.value(y).clone())
    }
}

/// Per-channel 4-neighbour Laplacian with replicate padding.
pub fn laplacian_filter(f: &FeatureMap) -> FeatureMap {
    let mut g = Graph::new();
    let x = g.constant(f.tensor().clone());
    let y = g.laplacian(x).expect("feature maps are rank 4");
    FeatureMap::new(g.value(y).clone()).expect("finite input gives finite output")
}

fn check_channels(op: &str, g: &Graph, x: Var, expected: usize) -> Result<()> {
    let shape = g.shape(x);
    if shape.len() != 4 || shape[1] != expected {
        return Err(Error::Shape(format!(
            "{op}: expected {expected} channels, got shape {shape:?}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsppConfig {
    pub dilation_rates: Vec<usize>,
    pub branch_channels: usize,
}

impl AsppConfig {
    /// Rates 1, 6, 12, 18 with a quarter of the input channels per branch.
    pub fn for_channels(channels: usize) -> Self {
        Self {
            dilation_rates: vec![1, 6, 12, 18],
            branch_channels: (channels / 4).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilation_rates.first() != Some(&1) {
            return Err(Error::Config("ASPP rates must start at 1".into()));
        }
        if self.dilation_rates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("ASPP rates must be strictly increasing".into()));
        }
        if self.branch_channels == 0 {
            return Err(Error::Config("ASPP branch_channels must be positive".into()));
        }
        Ok(())
    }
}

/// How the Laplacian enters the spatial branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianGating {
    /// Multiply by the Laplacian itself.
    Raw,
    /// Multiply by `1 + |lap|`, each channel normalized to `[0, 1]`.
    #[default]
    OnePlusAbs,
}

/// ASPP-pooled spatial gate modulated by the Laplacian of the input.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub channels: usize,
    pub config: AsppConfig,
    pub gating: LaplacianGating,
    pub branches: Vec<Conv2d>,
    pub fuse: Conv2d,
}

impl SpatialAttention {
    pub fn new<R: Rng>(
        pb: &mut ParamBuilder<'_, R>,
        channels: usize,
        config: AsppConfig,
        gating: LaplacianGating,
    ) -> Result<Self> {
        config.validate()?;
        let bc = config.branch_channels;
        let branches = config
            .dilation_rates
            .iter()
            .map(|&rate| {
                Conv2d::new(
                    &mut pb.sub(&format!("aspp{rate}")),
                    channels,
                    bc,
                    3,
                    ConvOpts::same(3, rate),
                    true,
                )
            })
            .collect::<Vec<_>>();
        let fuse = Conv2d::new(
            &mut pb.sub("fuse"),
            bc * branches.len(),
            1,
            1,
            ConvOpts::default(),
            true,
        );
        Ok(Self {
            channels,
            config,
            gating,
            branches,
            fuse,
        })
    }

    /// The single-channel gate `A_s` in `(0, 1)`.
    pub fn gate(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        check_channels("spatial attention", g, x, self.channels)?;
        let mut pooled = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let y = branch.forward(g, store, x)?;
            pooled.push(g.silu(y));
        }
        let cat = g.concat_channels(&pooled)?;
        let logits = self.fuse.forward(g, store, cat)?;
        Ok(g.sigmoid(logits))
    }

    fn edge_gain(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let lap = g.laplacian(x)?;
        Ok(match self.gating {
            LaplacianGating::Raw => lap,
            LaplacianGating::OnePlusAbs => {
                let mag = g.abs(lap);
                let peak = g.max_spatial(mag)?;
                let peak = g.add_scalar(peak, 1e-12);
                let norm = g.div(mag, peak)?;
                g.add_scalar(norm, 1.0)
            }
        })
    }

    /// Sets the fusion layer so the gate is a constant `sigmoid(bias)`.
    pub fn force_gate(&self, store: &ParamStore, bias: f64) -> Result<()> {
        force_constant(store, &self.fuse, bias)
    }
}

impl Block for SpatialAttention {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gate = self.gate(g, store, x)?;
        let gated = g.mul(x, gate)?;
        let gain = self.edge_gain(g, x)?;
        Ok(g.mul(gated, gain)?)
    }
}

/// Zeroes a layer's weights and fills its bias, making its output constant.
fn force_constant(store: &ParamStore, layer: &Conv2d, bias: f64) -> Result<()> {
    store.set(layer.weight, Tensor::zeros(store.shape(layer.weight)))?;
    if let Some(b) = layer.bias {
        store.set(b, Tensor::full(store.shape(b), bias))?;
    }
    Ok(())
}

/// Squeeze-and-excitation style per-channel gate.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub channels: usize,
    pub squeeze: Conv2d,
    pub excite: Conv2d,
}

impl ChannelAttention {
    pub const REDUCTION: usize = 4;

    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, channels: usize) -> Self {
        let hidden = (channels / Self::REDUCTION).max(1);
        Self {
            channels,
            squeeze: Conv2d::new(&mut pb.sub("squeeze"), channels, hidden, 1, ConvOpts::default(), true),
            excite: Conv2d::new(&mut pb.sub("excite"), hidden, channels, 1, ConvOpts::default(), true),
        }
    }

    /// The per-channel gate `A_c`, shape `[N, C, 1, 1]`.
    pub fn gate(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        check_channels("channel attention", g, x, self.channels)?;
        let pooled = g.mean_spatial(x)?;
        let h = self.squeeze.forward(g, store, pooled)?;
        let h = g.relu(h);
        let logits = self.excite.forward(g, store, h)?;
        Ok(g.sigmoid(logits))
    }

    /// Makes the gate a constant `sigmoid(bias)` for every channel.
    pub fn force_gate(&self, store: &ParamStore, bias: f64) -> Result<()> {
        force_constant(store, &self.excite, bias)
    }
}

impl Block for ChannelAttention {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gate = self.gate(g, store, x)?;
        Ok(g.mul(x, gate)?)
    }
}

/// `f + spatial(f) + channel(f)`.
#[derive(Clone, Debug)]
pub struct LocalContext {
    pub spatial: SpatialAttention,
    pub channel: ChannelAttention,
}

impl LocalContext {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, channels: usize, gating: LaplacianGating) -> Result<Self> {
        Ok(Self {
            spatial: SpatialAttention::new(
                &mut pb.sub("spatial"),
                channels,
                AsppConfig::for_channels(channels),
                gating,
            )?,
            channel: ChannelAttention::new(&mut pb.sub("channel"), channels),
        })
    }

    /// Shuts both gates, after which the block is the exact identity.
    pub fn zero_branches(&self, store: &ParamStore) -> Result<()> {
        self.spatial.force_gate(store, -1e3)?;
        self.channel.force_gate(store, -1e3)
    }
}

impl Block for LocalContext {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let s = self.spatial.forward(g, store, x)?;
        let c = self.channel.forward(g, store, x)?;
        let y = g.add(x, s)?;
        Ok(g.add(y, c)?)
    }
}

/// Scaled dot-product self-attention over positions with a residual,
/// followed by the channel gate.
#[derive(Clone, Debug)]
pub struct GlobalContext {
    pub channels: usize,
    pub key_dim: usize,
    pub query: Conv2d,
    pub key: Conv2d,
    pub value: Conv2d,
    pub channel: ChannelAttention,
}

impl GlobalContext {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, channels: usize) -> Self {
        let key_dim = (channels / 8).max(1);
        let proj = |pb: &mut ParamBuilder<'_, R>, name: &str, out: usize, bias: bool| {
            Conv2d::new(&mut pb.sub(name), channels, out, 1, ConvOpts::default(), bias)
        };
        Self {
            channels,
            key_dim,
            query: proj(pb, "query", key_dim, true),
            // a key bias shifts each query's scores uniformly, which the
            // softmax cancels
            key: proj(pb, "key", key_dim, false),
            value: proj(pb, "value", channels, true),
            channel: ChannelAttention::new(&mut pb.sub("channel"), channels),
        }
    }

    /// Returns the attention weights `[N, HW, HW]` (rows are queries) and
    /// the attended values `[N, C, H, W]`.
    pub fn attend(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        check_channels("global context", g, x, self.channels)?;
        let (n, c, h, w) = g.value(x).dims4()?;
        let hw = h * w;
        let q = self.query.forward(g, store, x)?;
        let q = g.reshape(q, &[n, self.key_dim, hw])?;
        let q = g.transpose(q)?;
        let k = self.key.forward(g, store, x)?;
        let k = g.reshape(k, &[n, self.key_dim, hw])?;
        let scores = g.matmul(q, k)?;
        let scores = g.mul_scalar(scores, 1.0 / (self.key_dim as f64).sqrt());
        let attn = g.softmax(scores)?;
        let v = self.value.forward(g, store, x)?;
        let v = g.reshape(v, &[n, c, hw])?;
        let attn_t = g.transpose(attn)?;
        let out = g.matmul(v, attn_t)?;
        let out = g.reshape(out, &[n, c, h, w])?;
        Ok((attn, out))
    }

    /// Zeroes the value projection so the attention path contributes nothing.
    pub fn zero_attention(&self, store: &ParamStore) -> Result<()> {
        force_constant(store, &self.value, 0.0)
    }
}

impl Block for GlobalContext {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (_, attended) = self.attend(g, store, x)?;
        let y = g.add(x, attended)?;
        self.channel.forward(g, store, y)
    }
}

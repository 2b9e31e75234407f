//! Encoder-decoder depth estimator with context-attention skips and a
//! global-context bottleneck.

use autograd::nn::{Conv2d, GroupNorm};
use autograd::{ConvOpts, Graph, ParamBuilder, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{Block, FeatureMap, GlobalContext, LaplacianGating, LocalContext};
use crate::data::{DepthMap, ImageTensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepthNetConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub laplacian_gating: LaplacianGating,
}

impl Default for DepthNetConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            base_channels: 32,
            laplacian_gating: LaplacianGating::OnePlusAbs,
        }
    }
}

impl DepthNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_channels == 0 {
            return Err(Error::Config("levels and base_channels must be at least 1".into()));
        }
        if self.levels > 8 {
            return Err(Error::Config(format!("{} levels is unreasonably deep", self.levels)));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.levels)
    }

    /// Spatial size multiple required internally.
    pub fn stride(&self) -> usize {
        1 << self.levels
    }
}

/// Two rounds of 3x3 convolution, group norm and SiLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    conv1: Conv2d,
    norm1: GroupNorm,
    conv2: Conv2d,
    norm2: GroupNorm,
}

impl ConvBlock {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, cin: usize, cout: usize) -> Self {
        Self {
            conv1: Conv2d::new(&mut pb.sub("conv1"), cin, cout, 3, ConvOpts::same(3, 1), false),
            norm1: GroupNorm::new(&mut pb.sub("norm1"), cout),
            conv2: Conv2d::new(&mut pb.sub("conv2"), cout, cout, 3, ConvOpts::same(3, 1), false),
            norm2: GroupNorm::new(&mut pb.sub("norm2"), cout),
        }
    }
}

impl Block for ConvBlock {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.conv1.forward(g, store, x)?;
        let y = self.norm1.forward(g, store, y)?;
        let y = g.silu(y);
        let y = self.conv2.forward(g, store, y)?;
        let y = self.norm2.forward(g, store, y)?;
        Ok(g.silu(y))
    }
}

/// Graph handles produced by [`DepthNet::forward_graph`].
#[derive(Clone, Copy, Debug)]
pub struct NetOutput {
    /// `[N, 1, H, W]` log-depth, cropped to the input size.
    pub log_depth: Var,
    /// Post-GCM bottleneck feature.
    pub bottleneck: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardResult {
    pub depth: DepthMap,
    pub bottleneck_feature: FeatureMap,
}

/// The depth estimator. Cloning (or [`DepthNet::make_twin`]) yields a view
/// over the same parameter storage.
#[derive(Clone, Debug)]
pub struct DepthNet {
    config: DepthNetConfig,
    store: ParamStore,
    encoder: Vec<ConvBlock>,
    bottleneck: ConvBlock,
    gcm: GlobalContext,
    lcms: Vec<LocalContext>,
    decoder: Vec<ConvBlock>,
    head: Conv2d,
}

impl DepthNet {
    /// He-normal initialization from `seed`; the head starts at zero so the
    /// initial prediction is depth 1 everywhere.
    pub fn new(config: DepthNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&store, &mut rng);
        let levels = config.levels;
        let ch = |l: usize| config.channels(l);

        let mut encoder = Vec::with_capacity(levels);
        for l in 0..levels {
            let cin = if l == 0 { 3 } else { ch(l - 1) };
            encoder.push(ConvBlock::new(&mut pb.sub(&format!("encoder.{l}")), cin, ch(l)));
        }
        let bottleneck = ConvBlock::new(&mut pb.sub("bottleneck"), ch(levels - 1), ch(levels));
        let gcm = GlobalContext::new(&mut pb.sub("gcm"), ch(levels));
        let mut lcms = Vec::with_capacity(levels);
        let mut decoder = Vec::with_capacity(levels);
        for l in 0..levels {
            lcms.push(LocalContext::new(
                &mut pb.sub(&format!("lcm.{l}")),
                ch(l),
                config.laplacian_gating,
            )?);
            decoder.push(ConvBlock::new(
                &mut pb.sub(&format!("decoder.{l}")),
                ch(l + 1) + ch(l),
                ch(l),
            ));
        }
        let head = Conv2d::new(&mut pb.sub("head"), ch(0), 1, 1, ConvOpts::default(), true);
        store.set(head.weight, Tensor::zeros(store.shape(head.weight)))?;
        Ok(Self {
            config,
            store,
            encoder,
            bottleneck,
            gcm,
            lcms,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &DepthNetConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn head(&self) -> &Conv2d {
        &self.head
    }

    pub fn global_context(&self) -> &GlobalContext {
        &self.gcm
    }

    pub fn local_contexts(&self) -> &[LocalContext] {
        &self.lcms
    }

    /// A second estimator sharing every parameter with this one.
    pub fn make_twin(&self) -> Self {
        self.clone()
    }

    /// Runs the network on `x` (`[N, 3, H, W]`), reflect-padding to a multiple
    /// of `2^levels` and cropping the output back.
    pub fn forward_graph(&self, g: &mut Graph, x: Var) -> Result<NetOutput> {
        let (_, c, h, w) = g.value(x).dims4()?;
        if c != 3 {
            return Err(Error::Shape(format!("depth net expects 3 input channels, got {c}")));
        }
        let s = self.config.stride();
        if h < s || w < s {
            return Err(Error::Shape(format!(
                "input {h}x{w} smaller than the network stride {s}"
            )));
        }
        let (ph, pw) = (h.div_ceil(s) * s, w.div_ceil(s) * s);
        let x = if (ph, pw) == (h, w) {
            x
        } else {
            g.pad_reflect(x, ph - h, pw - w)?
        };

        let store = &self.store;
        let mut skips = Vec::with_capacity(self.config.levels);
        let mut y = x;
        for (l, block) in self.encoder.iter().enumerate() {
            y = checked(block.forward(g, store, y)?, g, || format!("encoder.{l}"))?;
            skips.push(y);
            y = g.avg_pool2(y)?;
        }
        y = checked(self.bottleneck.forward(g, store, y)?, g, || "bottleneck".into())?;
        y = checked(self.gcm.forward(g, store, y)?, g, || "gcm".into())?;
        let bottleneck = y;

        for l in (0..self.config.levels).rev() {
            let skip = skips[l];
            let (_, _, sh, sw) = g.value(skip).dims4()?;
            let up = g.resize_bilinear(y, sh, sw)?;
            let ctx = checked(self.lcms[l].forward(g, store, skip)?, g, || format!("lcm.{l}"))?;
            let cat = g.concat_channels(&[up, ctx])?;
            y = checked(self.decoder[l].forward(g, store, cat)?, g, || format!("decoder.{l}"))?;
        }
        let r = checked(self.head.forward(g, store, y)?, g, || "head".into())?;
        let log_depth = if (ph, pw) == (h, w) {
            r
        } else {
            g.crop(r, 0, 0, h, w)?
        };
        Ok(NetOutput {
            log_depth,
            bottleneck,
        })
    }

    /// Inference on one image.
    pub fn forward(&self, image: &ImageTensor) -> Result<ForwardResult> {
        let mut g = Graph::new();
        let x = g.constant(image.to_tensor());
        let out = self.forward_graph(&mut g, x)?;
        let depth = g.value(out.log_depth).map(f64::exp);
        let (h, w) = (image.height(), image.width());
        let (depth, _) = DepthMap::floored(h, w, depth.into_data())
            .map_err(|_| Error::Numerical { layer: "depth".into() })?;
        Ok(ForwardResult {
            depth,
            bottleneck_feature: FeatureMap::new(g.value(out.bottleneck).clone())?,
        })
    }
}

fn checked(v: Var, g: &Graph, layer: impl FnOnce() -> String) -> Result<Var> {
    if g.value(v).is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical { layer: layer() })
    }
}

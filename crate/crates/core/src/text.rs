//! Speech-balloon segmentation, text compositing and the clean-crop search.

use autograd::nn::Conv2d;
use autograd::{Adam, AdamConfig, ConvOpts, Graph, ParamBuilder, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::Block;
use crate::data::{ensure_same_dims, DepthMap, ImageTensor, TextMask, DEPTH_FLOOR};
use crate::depth_net::ConvBlock;
use crate::error::{Error, Result};
use crate::scene::{generate_scene_with, BalloonMode};

/// Side length of the images produced by [`generate_text_fixtures`].
pub const FIXTURE_SIZE: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterConfig {
    pub base_channels: usize,
    /// Probabilities strictly above this are text.
    pub threshold: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            base_channels: 8,
            threshold: 0.5,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("segmenter needs at least one base channel".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SegmenterTraining {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 5,
            learning_rate: 5e-3,
            seed: 0,
        }
    }
}

/// Small U-Net over three resolutions with a sigmoid output.
#[derive(Clone, Debug)]
pub struct TextSegmenter {
    config: SegmenterConfig,
    store: ParamStore,
    enc0: ConvBlock,
    enc1: ConvBlock,
    bottom: ConvBlock,
    dec1: ConvBlock,
    dec0: ConvBlock,
    head: Conv2d,
}

impl TextSegmenter {
    /// The head starts at zero, so an untrained segmenter outputs 0.5
    /// everywhere.
    pub fn new(config: SegmenterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&store, &mut rng);
        let c = config.base_channels;
        let enc0 = ConvBlock::new(&mut pb.sub("enc0"), 3, c);
        let enc1 = ConvBlock::new(&mut pb.sub("enc1"), c, 2 * c);
        let bottom = ConvBlock::new(&mut pb.sub("bottom"), 2 * c, 4 * c);
        let dec1 = ConvBlock::new(&mut pb.sub("dec1"), 6 * c, 2 * c);
        let dec0 = ConvBlock::new(&mut pb.sub("dec0"), 3 * c, c);
        let head = Conv2d::new(&mut pb.sub("head"), c, 1, 1, ConvOpts::default(), true);
        store.set(head.weight, Tensor::zeros(store.shape(head.weight)))?;
        Ok(Self {
            config,
            store,
            enc0,
            enc1,
            bottom,
            dec1,
            dec0,
            head,
        })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Logits `[N, 1, H, W]` for images `[N, 3, H, W]`; sizes that are not
    /// a multiple of 4 are reflect-padded and the output cropped back.
    pub fn logits_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, c, h, w) = g.value(x).dims4()?;
        if c != 3 {
            return Err(Error::Shape(format!("segmenter expects 3 channels, got {c}")));
        }
        if h < 4 || w < 4 {
            return Err(Error::Shape(format!("segmenter input {h}x{w} is below 4x4")));
        }
        let (ph, pw) = (h.div_ceil(4) * 4, w.div_ceil(4) * 4);
        let x = if (ph, pw) == (h, w) {
            x
        } else {
            g.pad_reflect(x, ph - h, pw - w)?
        };
        let s = &self.store;
        let e0 = self.enc0.forward(g, s, x)?;
        let p0 = g.avg_pool2(e0)?;
        let e1 = self.enc1.forward(g, s, p0)?;
        let p1 = g.avg_pool2(e1)?;
        let b = self.bottom.forward(g, s, p1)?;
        let up1 = g.resize_bilinear(b, ph / 2, pw / 2)?;
        let cat1 = g.concat_channels(&[up1, e1])?;
        let d1 = self.dec1.forward(g, s, cat1)?;
        let up0 = g.resize_bilinear(d1, ph, pw)?;
        let cat0 = g.concat_channels(&[up0, e0])?;
        let d0 = self.dec0.forward(g, s, cat0)?;
        let logits = self.head.forward(g, s, d0)?;
        if !g.value(logits).is_finite() {
            return Err(Error::Numerical { layer: "segmenter".into() });
        }
        if (ph, pw) == (h, w) {
            Ok(logits)
        } else {
            Ok(g.crop(logits, 0, 0, h, w)?)
        }
    }

    /// Mean pixelwise binary cross-entropy against `targets` (`[N, 1, H, W]`).
    pub fn loss_graph(&self, g: &mut Graph, x: Var, targets: &Tensor) -> Result<Var> {
        let logits = self.logits_graph(g, x)?;
        Ok(g.bce_with_logits(logits, targets)?)
    }

    /// Text probability per pixel.
    pub fn probabilities(&self, image: &ImageTensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(image.to_tensor());
        let logits = self.logits_graph(&mut g, x)?;
        let p = g.sigmoid(logits);
        Ok(g.value(p).clone())
    }

    pub fn segment_text(&self, image: &ImageTensor) -> Result<TextMask> {
        let p = self.probabilities(image)?;
        let t = self.config.threshold;
        let bits = p.data().iter().map(|&v| u8::from(v > t)).collect();
        TextMask::new(image.height(), image.width(), bits)
    }

    /// Supervised training with Adam; returns the mean loss of each epoch.
    pub fn train(&self, samples: &[(ImageTensor, TextMask)], opts: &SegmenterTraining) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(Error::Config("no segmentation samples".into()));
        }
        if opts.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        for (img, mask) in samples {
            ensure_same_dims("segmenter sample", img, mask)?;
        }
        let mut opt = Adam::new(
            AdamConfig {
                lr: opts.learning_rate,
                ..AdamConfig::default()
            },
            &self.store,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut history = Vec::with_capacity(opts.epochs);
        for _ in 0..opts.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(opts.batch_size) {
                let images: Vec<Tensor> = batch.iter().map(|&i| samples[i].0.to_tensor()).collect();
                let masks: Vec<Tensor> = batch.iter().map(|&i| samples[i].1.to_tensor()).collect();
                let targets = Tensor::stack_batch(&masks)?;
                let mut g = Graph::new();
                let x = g.constant(Tensor::stack_batch(&images)?);
                let loss = self.loss_graph(&mut g, x, &targets)?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Numerical { layer: "segmenter loss".into() });
                }
                total += value * batch.len() as f64;
                let grads = g.backward(loss).for_store(&g, &self.store);
                opt.step(&self.store, &grads)?;
            }
            history.push(total / samples.len() as f64);
        }
        Ok(history)
    }
}

/// Pixel IoU of two masks; two empty masks count as a perfect match.
pub fn mask_iou(a: &TextMask, b: &TextMask) -> Result<f64> {
    ensure_same_dims("mask_iou", a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += usize::from(x == 1 && y == 1);
        union += usize::from(x == 1 || y == 1);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `(1 - M) * a + M * b`, pixelwise.
pub fn compose_text_adder_target(a: &ImageTensor, b: &ImageTensor, mask: &TextMask) -> Result<ImageTensor> {
    ensure_same_dims("compose_text_adder_target", a, b)?;
    ensure_same_dims("compose_text_adder_target", a, mask)?;
    let hw = a.height() * a.width();
    let m = mask.data();
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .enumerate()
        .map(|(i, (&av, &bv))| {
            let mv = m[i % hw] as f64;
            (1.0 - mv) * av + mv * bv
        })
        .collect();
    ImageTensor::new(a.height(), a.width(), data)
}

/// Zeroes depth under the mask and re-floors it; unmasked pixels keep their
/// exact values.
pub fn strip_text_from_depth(depth: &DepthMap, mask: &TextMask) -> Result<DepthMap> {
    ensure_same_dims("strip_text_from_depth", depth, mask)?;
    let data = depth
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&d, &m)| (d * (1.0 - m as f64)).max(DEPTH_FLOOR))
        .collect();
    DepthMap::new(depth.height(), depth.width(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropOptions {
    pub max_ratio: f64,
    pub start: usize,
    pub min_size: usize,
    pub seed: u64,
}

impl Default for CropOptions {
    fn default() -> Self {
        Self {
            max_ratio: 0.03,
            start: 384,
            min_size: 32,
            seed: 0,
        }
    }
}

/// Summed-area table with a zero row and column in front.
struct Integral {
    width: usize,
    sums: Vec<u64>,
}

impl Integral {
    fn new(mask: &TextMask) -> Self {
        let (h, w) = (mask.height(), mask.width());
        let width = w + 1;
        let mut sums = vec![0u64; (h + 1) * width];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += u64::from(mask.data()[y * w + x]);
                sums[(y + 1) * width + x + 1] = sums[y * width + x + 1] + row;
            }
        }
        Self { width, sums }
    }

    fn count(&self, top: usize, left: usize, size: usize) -> u64 {
        let at = |y: usize, x: usize| self.sums[y * self.width + x];
        at(top + size, left + size) + at(top, left) - at(top, left + size) - at(top + size, left)
    }
}

/// Square crop whose text fraction is at most `opts.max_ratio`.
///
/// A random `start`-sized window is tried first. Otherwise the side shrinks
/// one pixel at a time; for each size all placements are visited in raster
/// order beginning at a random offset, and the first clean one wins.
pub fn crop_until_text_ratio(
    image: &ImageTensor,
    mask: &TextMask,
    opts: &CropOptions,
) -> Result<(ImageTensor, CropRect)> {
    ensure_same_dims("crop_until_text_ratio", image, mask)?;
    let (h, w) = (image.height(), image.width());
    let no_crop = || Error::NoCleanCrop {
        min_size: opts.min_size,
        max_ratio: opts.max_ratio,
    };
    let mut size = opts.start.min(h).min(w);
    if size < opts.min_size.max(1) {
        return Err(no_crop());
    }
    let integral = Integral::new(mask);
    let clean = |top: usize, left: usize, size: usize| {
        integral.count(top, left, size) as f64 / (size * size) as f64 <= opts.max_ratio
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    let mut found = clean(top, left, size).then_some((top, left));
    while found.is_none() && size > opts.min_size.max(1) {
        size -= 1;
        let (rows, cols) = (h - size + 1, w - size + 1);
        let total = rows * cols;
        let offset = rng.random_range(0..total);
        found = (0..total)
            .map(|i| {
                let p = (offset + i) % total;
                (p / cols, p % cols)
            })
            .find(|&(t, l)| clean(t, l, size));
    }
    let (top, left) = found.ok_or_else(no_crop)?;
    let rect = CropRect {
        top,
        left,
        height: size,
        width: size,
    };
    Ok((image.crop(top, left, size, size)?, rect))
}

/// Synthetic panels, each with one speech balloon and its mask.
pub fn generate_text_fixtures(seed: u64, count: usize) -> Result<Vec<(ImageTensor, TextMask)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let scene_seed = rng.random();
            let layers = rng.random_range(1..=4);
            let s = generate_scene_with(scene_seed, FIXTURE_SIZE, FIXTURE_SIZE, layers, BalloonMode::Always)?;
            Ok((s.image, s.mask))
        })
        .collect()
}

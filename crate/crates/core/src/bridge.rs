//! Pluggable image translators and pseudo ground-truth depth providers.
//!
//! Both are looked up by name so that an external model's exported outputs
//! can be dropped in through configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::io::load_depth;
use crate::data::{DepthMap, ImageTensor};
use crate::error::{Error, Result};
use crate::scene::SceneDescriptor;

/// Maps a comics image into the real-image domain. Output keeps the shape
/// and stays in `[0, 1]`.
pub trait Translator: Send + Sync {
    fn name(&self) -> &str;
    fn translate(&self, image: &ImageTensor) -> Result<ImageTensor>;
}

/// One corpus item as seen by a provider.
#[derive(Clone, Copy, Debug)]
pub struct SampleRef<'a> {
    /// File stem, used as the cache key.
    pub stem: &'a str,
    pub image: &'a ImageTensor,
    pub scene: Option<&'a SceneDescriptor>,
}

/// Produces a strictly positive depth map with the image's extent.
pub trait PseudoGtProvider: Send + Sync {
    fn name(&self) -> &str;
    fn estimate(&self, sample: &SampleRef<'_>) -> Result<DepthMap>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn name(&self) -> &str {
        "identity"
    }

    fn translate(&self, image: &ImageTensor) -> Result<ImageTensor> {
        Ok(image.clone())
    }
}

/// Per-channel mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    pub fn of(image: &ImageTensor) -> Self {
        Self::of_corpus(std::slice::from_ref(image)).expect("one image")
    }

    /// Statistics pooled over every pixel of every image.
    pub fn of_corpus(images: &[ImageTensor]) -> Result<Self> {
        let n: usize = images.iter().map(|i| i.height() * i.width()).sum();
        if n == 0 {
            return Err(Error::EmptyEvaluation("no pixels to take statistics over".into()));
        }
        let mut mean = [0.0; 3];
        for img in images {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += img.plane(c).iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = [0.0; 3];
        for img in images {
            for (c, v) in var.iter_mut().enumerate() {
                *v += img.plane(c).iter().map(|x| (x - mean[c]).powi(2)).sum::<f64>();
            }
        }
        Ok(Self {
            mean,
            std: var.map(|v| (v / n as f64).sqrt()),
        })
    }
}

const FLAT_STD: f64 = 1e-9;

/// Per-channel affine recolouring towards reference statistics, clipped to
/// `[0, 1]`. A constant channel is shifted onto the reference mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatsTranslator {
    pub reference: ChannelStats,
}

impl Translator for StatsTranslator {
    fn name(&self) -> &str {
        "stats"
    }

    fn translate(&self, image: &ImageTensor) -> Result<ImageTensor> {
        let src = ChannelStats::of(image);
        let hw = image.height() * image.width();
        let data = image
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = i / hw;
                let (mu, sd) = (src.mean[c], src.std[c]);
                // summation rounding leaves constant channels with a tiny std
                let y = if sd > FLAT_STD {
                    (x - mu) / sd * self.reference.std[c] + self.reference.mean[c]
                } else {
                    x - mu + self.reference.mean[c]
                };
                y.clamp(0.0, 1.0)
            })
            .collect();
        ImageTensor::new(image.height(), image.width(), data)
    }
}

/// Analytic depth from the scene descriptor that generated the image.
#[derive(Clone, Copy, Debug, Default)]
pub struct SyntheticGtProvider;

impl PseudoGtProvider for SyntheticGtProvider {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn estimate(&self, sample: &SampleRef<'_>) -> Result<DepthMap> {
        let scene = sample.scene.ok_or_else(|| {
            Error::UnsupportedInput(format!(
                "{}: the synthetic provider needs a scene descriptor",
                sample.stem
            ))
        })?;
        let depth = scene.render_depth()?;
        check_extent(&depth, sample)?;
        Ok(depth)
    }
}

/// Reads `<dir>/<stem>.pfm`, as written by an external estimator.
#[derive(Clone, Debug)]
pub struct DirectoryProvider {
    pub dir: PathBuf,
}

impl PseudoGtProvider for DirectoryProvider {
    fn name(&self) -> &str {
        "from_directory"
    }

    fn estimate(&self, sample: &SampleRef<'_>) -> Result<DepthMap> {
        let path = self.dir.join(format!("{}.pfm", sample.stem));
        let loaded = load_depth(&path)?;
        check_extent(&loaded.map, sample)?;
        Ok(loaded.map)
    }
}

fn check_extent(depth: &DepthMap, sample: &SampleRef<'_>) -> Result<()> {
    let (h, w) = (sample.image.height(), sample.image.width());
    if (depth.height(), depth.width()) != (h, w) {
        return Err(Error::Shape(format!(
            "{}: depth is {}x{} but the image is {h}x{w}",
            sample.stem,
            depth.height(),
            depth.width()
        )));
    }
    Ok(())
}

/// What factories may draw on when building an implementation.
#[derive(Clone, Debug, Default)]
pub struct BridgeContext {
    /// Statistics of the real-image corpus.
    pub real_stats: Option<ChannelStats>,
    /// Directory of precomputed depth files.
    pub depth_dir: Option<PathBuf>,
}

type Factory<T> = Box<dyn Fn(&BridgeContext) -> Result<Box<T>> + Send + Sync>;

/// Named constructors for one kind of component.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    makers: BTreeMap<String, Factory<T>>,
}

impl<T: ?Sized> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("names", &self.names())
            .finish()
    }
}

impl<T: ?Sized> Registry<T> {
    pub fn empty(kind: &'static str) -> Self {
        Self {
            kind,
            makers: BTreeMap::new(),
        }
    }

    /// Adds or replaces the constructor for `name`.
    pub fn register(
        &mut self,
        name: impl Into<String>,
        make: impl Fn(&BridgeContext) -> Result<Box<T>> + Send + Sync + 'static,
    ) {
        self.makers.insert(name.into(), Box::new(make));
    }

    pub fn names(&self) -> Vec<&str> {
        self.makers.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, ctx: &BridgeContext) -> Result<Box<T>> {
        let make = self.makers.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown {} {name:?}; known: {}",
                self.kind,
                self.names().join(", ")
            ))
        })?;
        make(ctx)
    }
}

pub fn translators() -> Registry<dyn Translator> {
    let mut r: Registry<dyn Translator> = Registry::empty("translator");
    r.register("identity", |_| Ok(Box::new(IdentityTranslator)));
    r.register("stats", |ctx| {
        let reference = ctx
            .real_stats
            .ok_or_else(|| Error::Config("the stats translator needs real-corpus statistics".into()))?;
        Ok(Box::new(StatsTranslator { reference }))
    });
    r
}

pub fn providers() -> Registry<dyn PseudoGtProvider> {
    let mut r: Registry<dyn PseudoGtProvider> = Registry::empty("depth provider");
    r.register("synthetic", |_| Ok(Box::new(SyntheticGtProvider)));
    r.register("from_directory", |ctx| {
        let dir = ctx
            .depth_dir
            .clone()
            .ok_or_else(|| Error::Config("from_directory needs a depth directory".into()))?;
        Ok(Box::new(DirectoryProvider { dir }))
    });
    r
}

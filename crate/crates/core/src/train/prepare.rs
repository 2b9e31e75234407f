//! One-off preparation: pseudo ground truth, text masks and the segmenter,
//! all cached on disk.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::{load_store, save_store};
use super::config::{MaskSource, TrainConfig, TranslatedSupervision};
use super::corpus::{list_corpus, mask_path, CorpusItem};
use crate::bridge::{providers, translators, BridgeContext, ChannelStats, PseudoGtProvider, SampleRef, Translator};
use crate::data::io::{load_mask, save_depth, save_mask, write_atomic};
use crate::error::{Error, Result};
use crate::text::{generate_text_fixtures, TextSegmenter};

/// Paths inside the cache directory.
#[derive(Clone, Debug)]
pub struct CacheLayout {
    pub root: PathBuf,
}

impl CacheLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn pseudo_gt(&self, stem: &str) -> PathBuf {
        self.root.join("pseudo_gt").join(format!("{stem}.pfm"))
    }

    pub fn translated_gt(&self, stem: &str) -> PathBuf {
        self.root.join("pseudo_gt_translated").join(format!("{stem}.pfm"))
    }

    pub fn text_mask(&self, stem: &str) -> PathBuf {
        self.root.join("text_masks").join(format!("{stem}.png"))
    }

    pub fn segmenter(&self) -> PathBuf {
        self.root.join("segmenter.bin")
    }

    pub fn real_stats(&self) -> PathBuf {
        self.root.join("real_stats.json")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub real_images: usize,
    pub comics_images: usize,
    /// Provider invocations made by this run.
    pub estimator_calls: usize,
    /// Pseudo ground-truth files that were already cached.
    pub cache_hits: usize,
    pub masks_written: usize,
    pub mask_cache_hits: usize,
    pub segmenter_trained: bool,
    /// `stem: reason` for every image that was excluded.
    pub failures: Vec<String>,
}

fn read_stats(path: &Path) -> Result<ChannelStats> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Real-corpus channel statistics recorded by [`prepare`].
pub fn cached_real_stats(cache: &CacheLayout) -> Result<Option<ChannelStats>> {
    let p = cache.real_stats();
    if p.is_file() {
        read_stats(&p).map(Some)
    } else {
        Ok(None)
    }
}

/// Builds the configured translator from cached statistics.
pub fn build_translator(config: &TrainConfig, real_stats: Option<ChannelStats>) -> Result<Box<dyn Translator>> {
    translators().create(
        &config.translator,
        &BridgeContext {
            real_stats,
            depth_dir: config.paths.depth_dir.clone(),
        },
    )
}

/// Loads the cached segmenter, training and caching it first if needed.
pub fn ensure_segmenter(config: &TrainConfig, cache: &CacheLayout) -> Result<(TextSegmenter, bool)> {
    let seg = TextSegmenter::new(config.segmenter.model.clone(), config.seed)?;
    let path = cache.segmenter();
    if path.is_file() {
        load_store(seg.store(), &path)?;
        return Ok((seg, false));
    }
    let s = &config.segmenter;
    log::info!("training text segmenter on {} fixtures", s.fixtures);
    let fixtures = generate_text_fixtures(s.training.seed, s.fixtures)?;
    seg.train(&fixtures, &s.training)?;
    save_store(seg.store(), &path)?;
    Ok((seg, true))
}

/// Computes (or finds cached) pseudo ground truth for every real image and,
/// with translated supervision, every translated comics image; then text
/// masks for the comics images.
pub fn prepare(config: &TrainConfig) -> Result<PrepareSummary> {
    let paths = &config.paths;
    let real = list_corpus(&paths.real_corpus)?;
    let comics = list_corpus(&paths.comics_corpus)?;
    if real.is_empty() {
        return Err(Error::Config(format!(
            "no training images in {}",
            paths.real_corpus.display()
        )));
    }
    if comics.is_empty() {
        return Err(Error::Config(format!(
            "no training images in {}",
            paths.comics_corpus.display()
        )));
    }
    let cache = CacheLayout::new(&paths.cache);
    let mut summary = PrepareSummary {
        real_images: real.len(),
        comics_images: comics.len(),
        ..PrepareSummary::default()
    };

    let real_images = real.iter().map(CorpusItem::load_image).collect::<Result<Vec<_>>>()?;
    let stats = ChannelStats::of_corpus(&real_images)?;
    let stats_json = serde_json::to_string_pretty(&stats).expect("stats serialize");
    write_atomic(&cache.real_stats(), |p| {
        fs::write(p, stats_json.as_bytes()).map_err(|e| Error::io(p, e))
    })?;
    let ctx = BridgeContext {
        real_stats: Some(stats),
        depth_dir: paths.depth_dir.clone(),
    };
    let provider = providers().create(&config.provider, &ctx)?;
    let translator = translators().create(&config.translator, &ctx)?;

    let mut real_ok = 0;
    for (item, image) in real.iter().zip(&real_images) {
        let sample = SampleRef {
            stem: &item.stem,
            image,
            scene: item.scene.as_ref(),
        };
        if cache_depth(provider.as_ref(), &sample, &cache.pseudo_gt(&item.stem), &mut summary) {
            real_ok += 1;
        }
    }
    if real_ok == 0 {
        return Err(Error::Config(format!(
            "no training images: the {} provider failed on every real image",
            provider.name()
        )));
    }

    let (segmenter, trained) = ensure_segmenter(config, &cache)?;
    summary.segmenter_trained = trained;

    for item in &comics {
        let image = item.load_image()?;
        if config.translated_supervision == TranslatedSupervision::PseudoGt {
            let translated = translator.translate(&image)?;
            let sample = SampleRef {
                stem: &item.stem,
                image: &translated,
                scene: item.scene.as_ref(),
            };
            cache_depth(provider.as_ref(), &sample, &cache.translated_gt(&item.stem), &mut summary);
        }
        let mpath = cache.text_mask(&item.stem);
        if mpath.is_file() {
            summary.mask_cache_hits += 1;
            continue;
        }
        let mask = match config.mask_source {
            MaskSource::Segmenter => segmenter.segment_text(&image)?,
            MaskSource::Corpus => load_mask(&mask_path(&paths.comics_corpus, &item.stem))?,
        };
        write_atomic(&mpath, |p| save_mask(&mask, p))?;
        summary.masks_written += 1;
    }
    Ok(summary)
}

/// Returns whether a usable depth file exists afterwards.
fn cache_depth(provider: &dyn PseudoGtProvider, sample: &SampleRef<'_>, path: &Path, summary: &mut PrepareSummary) -> bool {
    if path.is_file() {
        summary.cache_hits += 1;
        return true;
    }
    summary.estimator_calls += 1;
    let result = provider
        .estimate(sample)
        .and_then(|depth| write_atomic(path, |tmp| save_depth(&depth, tmp)));
    match result {
        Ok(()) => true,
        Err(e) => {
            log::warn!("{}: excluded: {e}", sample.stem);
            summary.failures.push(format!("{}: {e}", sample.stem));
            false
        }
    }
}

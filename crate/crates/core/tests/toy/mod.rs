#![allow(dead_code)]

use std::path::Path;

use inkdepth::train::corpus::{write_scene_corpus, FixtureOptions};
use inkdepth::train::{Preset, TrainConfig};

/// Writes a synthetic corpus under `<root>/corpus` and returns a toy config
/// that uses it as both the real and the comics corpus.
pub fn toy_setup(root: &Path, count: usize, size: usize) -> TrainConfig {
    let corpus = root.join("corpus");
    write_scene_corpus(
        &corpus,
        &FixtureOptions {
            seed: 7,
            count,
            size,
            ..FixtureOptions::default()
        },
    )
    .unwrap();
    let mut c = TrainConfig::preset(Preset::Toy);
    c.paths.real_corpus = corpus.clone();
    c.paths.comics_corpus = corpus;
    c.paths.cache = root.join("cache");
    c.paths.checkpoints = root.join("checkpoints");
    cheap_segmenter(&mut c);
    c
}

/// Keeps segmenter training in preparation to a few seconds.
pub fn cheap_segmenter(c: &mut TrainConfig) {
    c.segmenter.fixtures = 6;
    c.segmenter.training.epochs = 2;
}

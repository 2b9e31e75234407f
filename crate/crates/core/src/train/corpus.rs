//! On-disk corpus layout.
//!
//! ```text
//! <root>/images/<stem>.png        RGB image
//! <root>/scenes/<stem>.json       scene descriptor (synthetic corpora)
//! <root>/depth/<stem>.pfm         analytic depth (synthetic corpora)
//! <root>/masks/<stem>.png         text mask, 0/255
//! <root>/annotations/<stem>.csv   depth-ordering labels
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::io::{load_image, save_depth, save_image, save_mask, write_atomic};
use crate::error::{Error, Result};
use crate::scene::{generate_scene, SceneDescriptor};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusItem {
    pub stem: String,
    pub image_path: PathBuf,
    pub scene: Option<SceneDescriptor>,
}

pub fn images_dir(root: &Path) -> PathBuf {
    root.join("images")
}

pub fn scene_path(root: &Path, stem: &str) -> PathBuf {
    root.join("scenes").join(format!("{stem}.json"))
}

pub fn depth_path(root: &Path, stem: &str) -> PathBuf {
    root.join("depth").join(format!("{stem}.pfm"))
}

pub fn mask_path(root: &Path, stem: &str) -> PathBuf {
    root.join("masks").join(format!("{stem}.png"))
}

pub fn annotation_path(root: &Path, stem: &str) -> PathBuf {
    root.join("annotations").join(format!("{stem}.csv"))
}

/// Items under `<root>/images`, sorted by stem. A missing directory is an
/// empty corpus.
pub fn list_corpus(root: &Path) -> Result<Vec<CorpusItem>> {
    let dir = images_dir(root);
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut items = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if !IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            continue;
        }
        let Some(stem) = path.file_stem().map(|s| s.to_string_lossy().into_owned()) else {
            continue;
        };
        let sp = scene_path(root, &stem);
        let scene = if sp.is_file() {
            let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
            Some(serde_json::from_str(&text).map_err(|e| Error::format(&sp, e.to_string()))?)
        } else {
            None
        };
        items.push(CorpusItem {
            stem,
            image_path: path,
            scene,
        });
    }
    items.sort_by(|a, b| a.stem.cmp(&b.stem));
    if let Some(w) = items.windows(2).find(|w| w[0].stem == w[1].stem) {
        return Err(Error::Config(format!("two images share the stem {}", w[0].stem)));
    }
    Ok(items)
}

impl CorpusItem {
    pub fn load_image(&self) -> Result<crate::data::ImageTensor> {
        load_image(&self.image_path)
    }
}

/// Options for [`write_scene_corpus`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixtureOptions {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub min_layers: usize,
    pub max_layers: usize,
    pub points_per_layer: usize,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 16,
            size: 64,
            min_layers: 2,
            max_layers: 5,
            points_per_layer: 4,
        }
    }
}

/// Writes a synthetic corpus of seeded scenes and returns the stems.
pub fn write_scene_corpus(root: &Path, opts: &FixtureOptions) -> Result<Vec<String>> {
    if opts.min_layers > opts.max_layers {
        return Err(Error::Config("min_layers exceeds max_layers".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut stems = Vec::with_capacity(opts.count);
    for i in 0..opts.count {
        let scene_seed: u64 = rng.random();
        let layers = rng.random_range(opts.min_layers..=opts.max_layers);
        let scene = generate_scene(scene_seed, opts.size, opts.size, layers)?;
        let stem = format!("scene_{i:04}");
        write_atomic(&images_dir(root).join(format!("{stem}.png")), |p| save_image(&scene.image, p))?;
        let json = serde_json::to_string_pretty(&scene.descriptor).expect("descriptor serializes");
        write_atomic(&scene_path(root, &stem), |p| {
            fs::write(p, json.as_bytes()).map_err(|e| Error::io(p, e))
        })?;
        write_atomic(&depth_path(root, &stem), |p| save_depth(&scene.depth, p))?;
        write_atomic(&mask_path(root, &stem), |p| save_mask(&scene.mask, p))?;
        let ann = scene.annotation(&stem, opts.points_per_layer);
        write_atomic(&annotation_path(root, &stem), |p| ann.save(p))?;
        stems.push(stem);
    }
    Ok(stems)
}

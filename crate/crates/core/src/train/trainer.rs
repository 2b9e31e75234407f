//! The training loop: twin estimators, feature GAN and text-aware
//! supervision, with a CSV loss log and per-epoch checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use autograd::{Adam, AdamConfig, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_into, load_store, AdamState, Checkpoint, RngState};
use super::config::{TrainConfig, TranslatedSupervision};
use super::corpus::{list_corpus, CorpusItem};
use super::prepare::{build_translator, cached_real_stats, CacheLayout};
use crate::bridge::{ChannelStats, Translator};
use crate::data::io::{load_depth, load_mask};
use crate::data::ImageTensor;
use crate::depth_net::DepthNet;
use crate::error::{Error, Result};
use crate::feature_gan::FeatureDiscriminator;
use crate::losses::{depth_loss_log, masked_l1_var};
use crate::text::TextSegmenter;

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    /// 1-based global step.
    pub step: u64,
    /// 1-based epoch the step belongs to.
    pub epoch: usize,
    pub l_depth: f64,
    pub l_masked: f64,
    pub l_adv_d: f64,
    pub l_adv_g: f64,
    pub l_total: f64,
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

fn write_loss_log(path: &Path, rows: &[LossRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    // an empty log still gets its header
    if rows.is_empty() {
        w.write_record(["step", "epoch", "l_depth", "l_masked", "l_adv_d", "l_adv_g", "l_total"])
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn append_loss_row(path: &Path, row: &LossRow) -> Result<()> {
    let file = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.serialize(row).map_err(|e| Error::format(path, e.to_string()))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn epoch_checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.ckpt"))
}

pub fn latest_checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("latest.ckpt")
}

/// Independent seeds for the parts of a run.
fn sub_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

const NET_SEED: u64 = 1;
const DISC_SEED: u64 = 2;
const ORDER_SEED: u64 = 3;

struct RealSample {
    image: Tensor,
    log_target: Tensor,
}

struct ComicsSample {
    image: ImageTensor,
    target: Option<Tensor>,
    /// `1 - M`.
    keep: Tensor,
}

fn load_training_data(config: &TrainConfig, cache: &CacheLayout) -> Result<(Vec<RealSample>, Vec<ComicsSample>)> {
    let paths = &config.paths;
    let mut dims = None;
    let mut check = |stem: &str, image: &ImageTensor| -> Result<()> {
        let d = (image.height(), image.width());
        match dims {
            None => dims = Some(d),
            Some(first) if first != d => {
                return Err(Error::Shape(format!(
                    "{stem} is {}x{} but training images must share one size ({}x{})",
                    d.0, d.1, first.0, first.1
                )))
            }
            _ => {}
        }
        Ok(())
    };

    let mut real = Vec::new();
    for item in list_corpus(&paths.real_corpus)? {
        let gt = cache.pseudo_gt(&item.stem);
        if !gt.is_file() {
            continue;
        }
        let image = item.load_image()?;
        check(&item.stem, &image)?;
        let depth = load_depth(&gt)?.map;
        real.push(RealSample {
            image: image.to_tensor(),
            log_target: depth.to_tensor().map(f64::ln),
        });
    }
    let mut comics = Vec::new();
    for item in list_corpus(&paths.comics_corpus)? {
        if let Some(s) = load_comics_sample(config, cache, &item)? {
            check(&item.stem, &s.image)?;
            comics.push(s);
        }
    }
    if real.is_empty() || comics.is_empty() {
        return Err(Error::Config(
            "no prepared training images; run prepare first".into(),
        ));
    }
    Ok((real, comics))
}

fn load_comics_sample(config: &TrainConfig, cache: &CacheLayout, item: &CorpusItem) -> Result<Option<ComicsSample>> {
    let mpath = cache.text_mask(&item.stem);
    if !mpath.is_file() {
        return Ok(None);
    }
    let target = match config.translated_supervision {
        TranslatedSupervision::None => None,
        TranslatedSupervision::PseudoGt => {
            let p = cache.translated_gt(&item.stem);
            if !p.is_file() {
                return Ok(None);
            }
            Some(load_depth(&p)?.map.to_tensor())
        }
    };
    let mask = load_mask(&mpath)?;
    Ok(Some(ComicsSample {
        image: item.load_image()?,
        target,
        keep: mask.to_tensor().map(|m| 1.0 - m),
    }))
}

/// Where the run is inside the current epoch.
struct EpochCursor {
    real: Vec<usize>,
    comics: Vec<usize>,
    batch: usize,
}

pub struct Trainer {
    config: TrainConfig,
    net: DepthNet,
    twin: DepthNet,
    disc: FeatureDiscriminator,
    segmenter: TextSegmenter,
    net_opt: Adam,
    disc_opt: Adam,
    translator: Box<dyn Translator>,
    real_stats: Option<ChannelStats>,
    rng: ChaCha8Rng,
    epoch: usize,
    step: u64,
    cursor: Option<EpochCursor>,
    real: Vec<RealSample>,
    comics: Vec<ComicsSample>,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("epoch", &self.epoch)
            .field("step", &self.step)
            .field("real", &self.real.len())
            .field("comics", &self.comics.len())
            .finish_non_exhaustive()
    }
}

impl Trainer {
    /// A fresh run over prepared data.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let cache = CacheLayout::new(&config.paths.cache);
        let (real, comics) = load_training_data(&config, &cache)?;
        let real_stats = cached_real_stats(&cache)?;
        let translator = build_translator(&config, real_stats)?;
        let segmenter = TextSegmenter::new(config.segmenter.model.clone(), config.seed)?;
        let seg_path = cache.segmenter();
        if !seg_path.is_file() {
            return Err(Error::Config("no prepared text segmenter; run prepare first".into()));
        }
        load_store(segmenter.store(), &seg_path)?;

        let net = DepthNet::new(config.net.clone(), sub_seed(config.seed, NET_SEED))?;
        let disc = FeatureDiscriminator::new(config.net.bottleneck_channels(), sub_seed(config.seed, DISC_SEED))?;
        let adam: AdamConfig = config.adam_config();
        Ok(Self {
            twin: net.make_twin(),
            net_opt: Adam::new(adam, net.store()),
            disc_opt: Adam::new(adam, disc.store()),
            rng: ChaCha8Rng::seed_from_u64(sub_seed(config.seed, ORDER_SEED)),
            net,
            disc,
            segmenter,
            translator,
            real_stats,
            epoch: 0,
            step: 0,
            cursor: None,
            real,
            comics,
            config,
        })
    }

    /// Continues a run from `ckpt`. The configuration must match the one the
    /// checkpoint was written with, apart from `epochs` and `paths`.
    pub fn resume(config: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        let comparable = |c: &TrainConfig| TrainConfig {
            epochs: 1,
            paths: Default::default(),
            ..c.clone()
        };
        if comparable(&config) != comparable(&ckpt.config) {
            return Err(Error::Config(
                "the checkpoint was written with a different training configuration".into(),
            ));
        }
        let mut t = Self::new(config)?;
        load_into(t.net.store(), &ckpt.depth_net, "depth_net")?;
        load_into(t.disc.store(), &ckpt.discriminator, "discriminator")?;
        load_into(t.segmenter.store(), &ckpt.segmenter, "segmenter")?;
        ckpt.net_adam.restore_into(&mut t.net_opt)?;
        ckpt.disc_adam.restore_into(&mut t.disc_opt)?;
        t.rng = ckpt.rng.restore()?;
        t.epoch = ckpt.epoch;
        t.step = ckpt.step;
        if ckpt.real_stats.is_some() && ckpt.real_stats != t.real_stats {
            log::warn!("real-corpus statistics changed since the checkpoint was written");
        }
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// The real-branch estimator.
    pub fn net(&self) -> &DepthNet {
        &self.net
    }

    /// The translated-branch estimator.
    pub fn twin(&self) -> &DepthNet {
        &self.twin
    }

    pub fn discriminator(&self) -> &FeatureDiscriminator {
        &self.disc
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.real.len().div_ceil(self.config.batch_size)
    }

    pub fn at_epoch_boundary(&self) -> bool {
        self.cursor.is_none()
    }

    /// Snapshot of the run; only available between epochs.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        if self.cursor.is_some() {
            return Err(Error::Checkpoint("checkpoints are taken between epochs".into()));
        }
        Ok(Checkpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            rng: RngState::capture(&self.rng),
            real_stats: self.real_stats,
            depth_net: self.net.store().snapshot(),
            discriminator: self.disc.store().snapshot(),
            segmenter: self.segmenter.store().snapshot(),
            net_adam: AdamState::capture(&self.net_opt),
            disc_adam: AdamState::capture(&self.disc_opt),
        })
    }

    /// Runs the next optimizer step, shuffling a new epoch when needed.
    pub fn next_step(&mut self) -> Result<LossRow> {
        if self.cursor.is_none() {
            let mut real: Vec<usize> = (0..self.real.len()).collect();
            let mut comics: Vec<usize> = (0..self.comics.len()).collect();
            real.shuffle(&mut self.rng);
            comics.shuffle(&mut self.rng);
            self.cursor = Some(EpochCursor { real, comics, batch: 0 });
        }
        let cursor = self.cursor.as_ref().expect("cursor set");
        let bs = self.config.batch_size;
        let start = cursor.batch * bs;
        let real_idx: Vec<usize> = cursor.real[start..(start + bs).min(cursor.real.len())].to_vec();
        let comics_idx: Vec<usize> = (0..real_idx.len())
            .map(|i| cursor.comics[(start + i) % cursor.comics.len()])
            .collect();

        let row = self.update(&real_idx, &comics_idx)?;

        let cursor = self.cursor.as_mut().expect("cursor set");
        cursor.batch += 1;
        if cursor.batch * bs >= cursor.real.len() {
            self.cursor = None;
            self.epoch += 1;
        }
        Ok(row)
    }

    fn update(&mut self, real_idx: &[usize], comics_idx: &[usize]) -> Result<LossRow> {
        let w = self.config.loss;
        let mut g = Graph::new();

        let stack = |items: Vec<Tensor>| Tensor::stack_batch(&items).map_err(Error::from);
        let x_real = stack(real_idx.iter().map(|&i| self.real[i].image.clone()).collect())?;
        let t_real = stack(real_idx.iter().map(|&i| self.real[i].log_target.clone()).collect())?;
        let x_real = g.constant(x_real);
        let t_real = g.constant(t_real);
        let out_real = self.net.forward_graph(&mut g, x_real)?;
        let l_depth = depth_loss_log(&mut g, out_real.log_depth, t_real, w.lambda_si)?;

        let translated = comics_idx
            .iter()
            .map(|&i| self.translator.translate(&self.comics[i].image).map(|t| t.to_tensor()))
            .collect::<Result<Vec<_>>>()?;
        let x_comics = g.constant(stack(translated)?);
        let out_comics = self.twin.forward_graph(&mut g, x_comics)?;
        let l_masked = match self.config.translated_supervision {
            TranslatedSupervision::PseudoGt => {
                let targets = comics_idx
                    .iter()
                    .map(|&i| self.comics[i].target.clone().expect("pseudo-gt loaded"))
                    .collect();
                let target = g.constant(stack(targets)?);
                let keep = g.constant(stack(comics_idx.iter().map(|&i| self.comics[i].keep.clone()).collect())?);
                let pred = g.exp(out_comics.log_depth);
                masked_l1_var(&mut g, pred, target, keep)?
            }
            TranslatedSupervision::None => g.constant(Tensor::scalar(0.0)),
        };

        // discriminator first, on detached features; then the encoder sees
        // the updated discriminator through frozen parameters
        let f_real = g.value(out_real.bottleneck).clone();
        let f_comics = g.value(out_comics.bottleneck).clone();
        let l_adv_d = self.disc.discriminator_phase(&mut self.disc_opt, &f_real, &f_comics)?;
        let l_adv_g = self.disc.generator_loss(&mut g, out_comics.bottleneck, self.config.gan_mode)?;

        let sup = g.add(l_depth, l_masked)?;
        let sup = g.mul_scalar(sup, w.alpha_depth);
        let adv = g.mul_scalar(l_adv_g, w.alpha_adv);
        let total = g.add(sup, adv)?;

        let row = LossRow {
            step: self.step + 1,
            epoch: self.epoch + 1,
            l_depth: g.value(l_depth).item(),
            l_masked: g.value(l_masked).item(),
            l_adv_d,
            l_adv_g: g.value(l_adv_g).item(),
            l_total: g.value(total).item(),
        };
        if ![row.l_depth, row.l_masked, row.l_adv_g, row.l_total].iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical { layer: "training loss".into() });
        }
        let grads = g.backward(total).for_store(&g, self.net.store());
        if !grads.iter().all(Tensor::is_finite) {
            return Err(Error::Numerical { layer: "depth net gradients".into() });
        }
        self.net_opt.step(self.net.store(), &grads)?;
        self.step += 1;
        Ok(row)
    }

    /// Trains until `config.epochs` epochs are complete, appending to the
    /// loss log and writing `epoch_NNNN.ckpt` and `latest.ckpt` after every
    /// epoch. `hook` sees the trainer after each step.
    ///
    /// A fresh run starts a new log and also writes `epoch_0000.ckpt`; a
    /// resumed run keeps the log rows up to its checkpoint's step.
    pub fn run(&mut self, hook: &mut dyn FnMut(&Trainer, &LossRow)) -> Result<Checkpoint> {
        let dir = self.config.paths.checkpoints.clone();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let log_path = self.config.paths.log_path();
        if self.step == 0 {
            write_loss_log(&log_path, &[])?;
            let ckpt = self.checkpoint()?;
            ckpt.save(&epoch_checkpoint_path(&dir, 0))?;
            ckpt.save(&latest_checkpoint_path(&dir))?;
        } else {
            let kept: Vec<LossRow> = if log_path.is_file() {
                read_loss_log(&log_path)?
                    .into_iter()
                    .filter(|r| r.step <= self.step)
                    .collect()
            } else {
                Vec::new()
            };
            write_loss_log(&log_path, &kept)?;
        }
        while self.epoch < self.config.epochs {
            let row = self.next_step()?;
            append_loss_row(&log_path, &row)?;
            hook(self, &row);
            if self.at_epoch_boundary() {
                let ckpt = self.checkpoint()?;
                ckpt.save(&epoch_checkpoint_path(&dir, self.epoch))?;
                ckpt.save(&latest_checkpoint_path(&dir))?;
                log::info!("epoch {} done: l_total {:.6}", self.epoch, row.l_total);
            }
        }
        self.checkpoint()
    }
}

/// Runs a full training from scratch, or from `resume` when given.
pub fn train(config: TrainConfig, resume: Option<&Path>) -> Result<Checkpoint> {
    let mut trainer = match resume {
        Some(p) => Trainer::resume(config, &Checkpoint::load(p)?)?,
        None => Trainer::new(config)?,
    };
    trainer.run(&mut |_, _| {})
}

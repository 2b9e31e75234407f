//! Checkpoint archives: config, manifest and raw little-endian f64 tensors.

use std::path::Path;

use autograd::{Adam, ParamStore, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::archive::Archive;
use super::config::TrainConfig;
use crate::bridge::ChannelStats;
use crate::data::io::{read_bytes, write_atomic};
use crate::error::{Error, Result};

const FORMAT: u32 = 1;

pub type NamedTensors = Vec<(String, Tensor)>;

/// Exact position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// `u128` does not fit JSON numbers, so it is kept as decimal text.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Checkpoint("corrupt RNG state".into());
        let seed: [u8; 32] = hex::decode(&self.seed)
            .map_err(|_| bad())?
            .try_into()
            .map_err(|_| bad())?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub steps: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl AdamState {
    pub fn capture(opt: &Adam) -> Self {
        Self {
            steps: opt.steps,
            first: opt.first.clone(),
            second: opt.second.clone(),
        }
    }

    /// Copies the moments into `opt`, which must belong to a store of the
    /// same layout.
    pub fn restore_into(&self, opt: &mut Adam) -> Result<()> {
        let same = |a: &[Tensor], b: &[Tensor]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape());
        if !same(&self.first, &opt.first) || !same(&self.second, &opt.second) {
            return Err(Error::Checkpoint("optimizer state does not match the model".into()));
        }
        opt.steps = self.steps;
        opt.first = self.first.clone();
        opt.second = self.second.clone();
        Ok(())
    }
}

/// Everything needed to continue a run or to predict.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub rng: RngState,
    pub real_stats: Option<ChannelStats>,
    pub depth_net: NamedTensors,
    pub discriminator: NamedTensors,
    pub segmenter: NamedTensors,
    pub net_adam: AdamState,
    pub disc_adam: AdamState,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    entry: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: u32,
    epoch: usize,
    step: u64,
    rng: RngState,
    real_stats: Option<ChannelStats>,
    net_adam_steps: u64,
    disc_adam_steps: u64,
    tensors: Vec<TensorEntry>,
}

fn encode(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn decode(bytes: &[u8], shape: &[usize], entry: &str) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if bytes.len() != n * 8 {
        return Err(Error::Checkpoint(format!("{entry}: {} bytes for shape {shape:?}", bytes.len())));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape.to_vec(), data).map_err(|e| Error::Checkpoint(format!("{entry}: {e}")))
}

/// Writes named tensors under `prefix/` and records them in `manifest`.
fn put_tensors(archive: &mut Archive, manifest: &mut Vec<TensorEntry>, prefix: &str, named: &[(String, &Tensor)]) -> Result<()> {
    for (name, t) in named {
        let entry = format!("tensors/{prefix}/{name}.bin");
        archive.add(entry.clone(), encode(t))?;
        manifest.push(TensorEntry {
            entry,
            shape: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn as_refs(v: &NamedTensors) -> Vec<(String, &Tensor)> {
    v.iter().map(|(n, t)| (n.clone(), t)).collect()
}

fn adam_named<'a>(names: &[String], state: &'a [Tensor]) -> Vec<(String, &'a Tensor)> {
    names.iter().cloned().zip(state.iter()).collect()
}

impl Checkpoint {
    pub fn to_archive(&self) -> Result<Archive> {
        let mut archive = Archive::new();
        let config = serde_json::to_vec_pretty(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut tensors = Vec::new();
        let mut body = Archive::new();
        put_tensors(&mut body, &mut tensors, "depth_net", &as_refs(&self.depth_net))?;
        put_tensors(&mut body, &mut tensors, "discriminator", &as_refs(&self.discriminator))?;
        put_tensors(&mut body, &mut tensors, "segmenter", &as_refs(&self.segmenter))?;
        let net_names: Vec<String> = self.depth_net.iter().map(|(n, _)| n.clone()).collect();
        let disc_names: Vec<String> = self.discriminator.iter().map(|(n, _)| n.clone()).collect();
        if self.net_adam.first.len() != net_names.len() || self.disc_adam.first.len() != disc_names.len() {
            return Err(Error::Checkpoint("optimizer state does not match the model".into()));
        }
        put_tensors(&mut body, &mut tensors, "adam/depth_net/first", &adam_named(&net_names, &self.net_adam.first))?;
        put_tensors(&mut body, &mut tensors, "adam/depth_net/second", &adam_named(&net_names, &self.net_adam.second))?;
        put_tensors(&mut body, &mut tensors, "adam/discriminator/first", &adam_named(&disc_names, &self.disc_adam.first))?;
        put_tensors(&mut body, &mut tensors, "adam/discriminator/second", &adam_named(&disc_names, &self.disc_adam.second))?;
        let manifest = Manifest {
            format: FORMAT,
            epoch: self.epoch,
            step: self.step,
            rng: self.rng.clone(),
            real_stats: self.real_stats,
            net_adam_steps: self.net_adam.steps,
            disc_adam_steps: self.disc_adam.steps,
            tensors,
        };
        let manifest = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
        archive.add("config.json", config)?;
        archive.add("manifest.json", manifest)?;
        for name in body.names() {
            archive.add(name, body.require(name)?.to_vec())?;
        }
        Ok(archive)
    }

    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let json_err = |what: &str, e: serde_json::Error| Error::Checkpoint(format!("{what}: {e}"));
        let config: TrainConfig =
            serde_json::from_slice(archive.require("config.json")?).map_err(|e| json_err("config.json", e))?;
        let manifest: Manifest =
            serde_json::from_slice(archive.require("manifest.json")?).map_err(|e| json_err("manifest.json", e))?;
        if manifest.format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported checkpoint format {}", manifest.format)));
        }
        let mut groups: std::collections::BTreeMap<String, NamedTensors> = Default::default();
        for t in &manifest.tensors {
            let rest = t
                .entry
                .strip_prefix("tensors/")
                .and_then(|r| r.strip_suffix(".bin"))
                .ok_or_else(|| Error::Checkpoint(format!("bad tensor entry {}", t.entry)))?;
            // group is everything up to the parameter name, which itself has no slash
            let (group, name) = rest
                .rsplit_once('/')
                .ok_or_else(|| Error::Checkpoint(format!("bad tensor entry {}", t.entry)))?;
            let tensor = decode(archive.require(&t.entry)?, &t.shape, &t.entry)?;
            groups.entry(group.to_string()).or_default().push((name.to_string(), tensor));
        }
        let mut take = |g: &str| groups.remove(g).unwrap_or_default();
        let depth_net = take("depth_net");
        let discriminator = take("discriminator");
        let segmenter = take("segmenter");
        let values = |v: NamedTensors| v.into_iter().map(|(_, t)| t).collect::<Vec<_>>();
        Ok(Self {
            config,
            epoch: manifest.epoch,
            step: manifest.step,
            rng: manifest.rng,
            real_stats: manifest.real_stats,
            net_adam: AdamState {
                steps: manifest.net_adam_steps,
                first: values(take("adam/depth_net/first")),
                second: values(take("adam/depth_net/second")),
            },
            disc_adam: AdamState {
                steps: manifest.disc_adam_steps,
                first: values(take("adam/discriminator/first")),
                second: values(take("adam/discriminator/second")),
            },
            depth_net,
            discriminator,
            segmenter,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_archive()?.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_archive(&Archive::from_bytes(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        write_atomic(path, |tmp| std::fs::write(tmp, &bytes).map_err(|e| Error::io(tmp, e)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?)
    }
}

/// Copies `named` into `store` by name; every store entry must be present
/// with the right shape.
pub fn load_into(store: &ParamStore, named: &NamedTensors, what: &str) -> Result<()> {
    store
        .load_named(|name| named.iter().find(|(n, _)| n == name).map(|(_, t)| t))
        .map_err(|e| Error::Checkpoint(format!("{what}: {e}")))
}

/// Standalone archive of one parameter store, used for the prepared
/// segmenter.
pub fn save_store(store: &ParamStore, path: &Path) -> Result<()> {
    let mut archive = Archive::new();
    let mut tensors = Vec::new();
    let snap = store.snapshot();
    let named: Vec<(String, &Tensor)> = snap.iter().map(|(n, t)| (n.clone(), t)).collect();
    let mut body = Archive::new();
    put_tensors(&mut body, &mut tensors, "params", &named)?;
    let manifest = serde_json::to_vec_pretty(&tensors).map_err(|e| Error::Checkpoint(e.to_string()))?;
    archive.add("manifest.json", manifest)?;
    for name in body.names() {
        archive.add(name, body.require(name)?.to_vec())?;
    }
    let bytes = archive.to_bytes()?;
    write_atomic(path, |tmp| std::fs::write(tmp, &bytes).map_err(|e| Error::io(tmp, e)))
}

pub fn load_store(store: &ParamStore, path: &Path) -> Result<()> {
    let archive = Archive::from_bytes(&read_bytes(path)?)?;
    let tensors: Vec<TensorEntry> = serde_json::from_slice(archive.require("manifest.json")?)
        .map_err(|e| Error::Checkpoint(format!("manifest.json: {e}")))?;
    let mut named = Vec::new();
    for t in tensors {
        let name = t
            .entry
            .strip_prefix("tensors/params/")
            .and_then(|r| r.strip_suffix(".bin"))
            .ok_or_else(|| Error::Checkpoint(format!("bad tensor entry {}", t.entry)))?;
        named.push((name.to_string(), decode(archive.require(&t.entry)?, &t.shape, &t.entry)?));
    }
    load_into(store, &named, &path.display().to_string())
}

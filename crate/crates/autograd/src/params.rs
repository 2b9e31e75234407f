use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Default)]
struct Entries {
    names: Vec<String>,
    values: Vec<Tensor>,
}

/// Named, shared parameter storage.
///
/// Cloning a store yields another handle onto the same tensors: an update
/// through one clone is visible through every other.
#[derive(Clone, Debug)]
pub struct ParamStore {
    id: u64,
    entries: Arc<RwLock<Entries>>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            entries: Arc::new(RwLock::new(Entries::default())),
        }
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }

    /// True when both handles point at the same storage.
    pub fn shares_storage_with(&self, other: &ParamStore) -> bool {
        Arc::ptr_eq(&self.entries, &other.entries)
    }

    fn read(&self) -> RwLockReadGuard<'_, Entries> {
        self.entries.read().expect("parameter store lock poisoned")
    }

    pub fn add(&self, name: impl Into<String>, value: Tensor) -> ParamId {
        let mut e = self.entries.write().expect("parameter store lock poisoned");
        e.names.push(name.into());
        e.values.push(value);
        ParamId(e.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.read().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: ParamId) -> Tensor {
        self.read().values[id.0].clone()
    }

    pub fn shape(&self, id: ParamId) -> Vec<usize> {
        self.read().values[id.0].shape().to_vec()
    }

    pub fn name(&self, id: ParamId) -> String {
        self.read().names[id.0].clone()
    }

    pub fn names(&self) -> Vec<String> {
        self.read().names.clone()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.read().names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn set(&self, id: ParamId, value: Tensor) -> Result<()> {
        let mut e = self.entries.write().expect("parameter store lock poisoned");
        let cur = &mut e.values[id.0];
        if cur.shape() != value.shape() {
            return Err(TensorError::mismatch("ParamStore::set", cur.shape(), value.shape()));
        }
        *cur = value;
        Ok(())
    }

    /// Mutates every tensor in place, in registration order.
    pub fn update(&self, mut f: impl FnMut(ParamId, &mut Tensor)) {
        let mut e = self.entries.write().expect("parameter store lock poisoned");
        for (i, t) in e.values.iter_mut().enumerate() {
            f(ParamId(i), t);
        }
    }

    /// `(name, tensor)` pairs in registration order.
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        let e = self.read();
        e.names.iter().cloned().zip(e.values.iter().cloned()).collect()
    }

    /// Loads tensors by name; every stored parameter must be present with a
    /// matching shape.
    pub fn load_named<'a>(&self, mut lookup: impl FnMut(&str) -> Option<&'a Tensor>) -> Result<()> {
        let mut e = self.entries.write().expect("parameter store lock poisoned");
        let Entries { names, values } = &mut *e;
        for (name, value) in names.iter().zip(values.iter_mut()) {
            let src = lookup(name).ok_or_else(|| TensorError::UnknownParam(name.clone()))?;
            if src.shape() != value.shape() {
                return Err(TensorError::mismatch("load_named", value.shape(), src.shape()));
            }
            *value = src.clone();
        }
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.read().values.iter().map(Tensor::numel).sum()
    }

    /// All parameters concatenated in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        let e = self.read();
        let mut out = Vec::with_capacity(e.values.iter().map(Tensor::numel).sum());
        for v in &e.values {
            out.extend_from_slice(v.data());
        }
        out
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn assign_flat(&self, flat: &[f64]) -> Result<()> {
        let mut e = self.entries.write().expect("parameter store lock poisoned");
        let total: usize = e.values.iter().map(Tensor::numel).sum();
        if total != flat.len() {
            return Err(TensorError::invalid(
                "assign_flat",
                format!("store holds {total} values, got {}", flat.len()),
            ));
        }
        let mut off = 0;
        for v in e.values.iter_mut() {
            let n = v.numel();
            v.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let e = self.read();
        let mut h = Sha256::new();
        for (name, v) in e.names.iter().zip(&e.values) {
            h.update(name.as_bytes());
            for d in v.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in v.data() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Registers parameters under a dotted name prefix.
pub struct ParamBuilder<'a, R: Rng> {
    store: &'a ParamStore,
    prefix: String,
    rng: &'a mut R,
}

impl<'a, R: Rng> ParamBuilder<'a, R> {
    pub fn new(store: &'a ParamStore, rng: &'a mut R) -> Self {
        Self {
            store,
            prefix: String::new(),
            rng,
        }
    }

    pub fn sub<'b>(&'b mut self, name: &str) -> ParamBuilder<'b, R> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamBuilder {
            store: self.store,
            prefix,
            rng: self.rng,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.store.add(self.full_name(name), Tensor::full(shape.to_vec(), value))
    }

    /// He-normal initialization, `std = sqrt(2 / fan_in)`.
    pub fn he_normal(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| normal.sample(self.rng)).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("shape matches data");
        self.store.add(self.full_name(name), t)
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }
}

//! Versioned binary container for model weights, optimizer moments and the
//! sampling stream.
//!
//! Layout (little endian): magic, `u32` version, length-prefixed config and
//! model-description texts, `u64` iteration, minimum crop and Adam step
//! counters, RNG seed/stream/word position, then named tensors as
//! `name, u64 rank, u64 dims..., f64 values...`.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use tapegrad::{AdamConfig, AdamState, Tensor};

use crate::error::{Error, Result};
use crate::model::{FeatureStats, Model};
use crate::runconfig::ModelSpec;
use crate::train::{Dataset, Trainer};

pub const MAGIC: &[u8; 8] = b"MSTYCKPT";
pub const VERSION: u32 = 1;

/// A named tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Position in the ChaCha stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Run configuration text the checkpoint came from (provenance only).
    pub config_text: String,
    /// [`ModelSpec`] text used to rebuild the networks.
    pub model_spec: String,
    pub iteration: u64,
    pub min_crop: u64,
    pub adam_eg_step: u64,
    pub adam_d_step: u64,
    pub rng: RngState,
    pub tensors: Vec<NamedTensor>,
}

fn param_key(name: &str) -> String {
    format!("param/{name}")
}

fn moment_keys(prefix: &str, name: &str) -> (String, String) {
    (format!("{prefix}.m/{name}"), format!("{prefix}.v/{name}"))
}

fn adam_tensors(out: &mut Vec<NamedTensor>, prefix: &str, model: &Model, adam: &AdamState) {
    for (slot, &id) in adam.params().iter().enumerate() {
        let (m, v) = adam.moments(slot);
        let shape = model.store.value(id).shape().to_vec();
        let (km, kv) = moment_keys(prefix, model.store.name(id));
        out.push(NamedTensor { name: km, shape: shape.clone(), data: m.to_vec() });
        out.push(NamedTensor { name: kv, shape, data: v.to_vec() });
    }
}

fn model_tensors(model: &Model) -> Vec<NamedTensor> {
    let mut out: Vec<NamedTensor> = model
        .store
        .ids()
        .map(|id| {
            let t = model.store.value(id);
            NamedTensor { name: param_key(model.store.name(id)), shape: t.shape().to_vec(), data: t.data().to_vec() }
        })
        .collect();
    for (name, values) in model.stats.buffers() {
        out.push(NamedTensor { name: name.to_string(), shape: vec![values.len()], data: values.clone() });
    }
    out
}

impl Checkpoint {
    /// Weights and statistics only, for inference.
    pub fn from_model(model: &Model, spec: &ModelSpec, config_text: &str) -> Self {
        let fresh = ChaCha8Rng::seed_from_u64(0);
        Checkpoint {
            config_text: config_text.to_string(),
            model_spec: spec.to_text(),
            iteration: 0,
            min_crop: 0,
            adam_eg_step: 0,
            adam_d_step: 0,
            rng: RngState::capture(&fresh),
            tensors: model_tensors(model),
        }
    }

    pub fn from_trainer(trainer: &Trainer, spec: &ModelSpec, config_text: &str) -> Self {
        let mut tensors = model_tensors(&trainer.model);
        adam_tensors(&mut tensors, "adam_eg", &trainer.model, &trainer.adam_eg);
        adam_tensors(&mut tensors, "adam_d", &trainer.model, &trainer.adam_d);
        Checkpoint {
            config_text: config_text.to_string(),
            model_spec: spec.to_text(),
            iteration: trainer.iteration,
            min_crop: trainer.min_crop as u64,
            adam_eg_step: trainer.adam_eg.step,
            adam_d_step: trainer.adam_d.step,
            rng: RngState::capture(&trainer.rng),
            tensors,
        }
    }

    fn index(&self) -> BTreeMap<&str, &NamedTensor> {
        self.tensors.iter().map(|t| (t.name.as_str(), t)).collect()
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::parse(&self.model_spec).map_err(|e| e.context("checkpoint model description"))
    }

    /// Rebuilds the networks and loads every weight, failing on any missing or
    /// misshapen tensor.
    pub fn model(&self) -> Result<Model> {
        let spec = self.spec()?;
        let index = self.index();
        let stats = FeatureStats::from_buffers(|name| {
            index.get(name).map(|t| t.data.clone()).ok_or_else(|| Error::Checkpoint(format!("missing `{name}`")))
        })?;
        let mut model = Model::new(spec.hp, spec.grouping, stats, 0)?;
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let key = param_key(model.store.name(id));
            let t = index.get(key.as_str()).ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))?;
            let value = Tensor::new(t.shape.clone(), t.data.clone())?;
            model.store.set(id, value).map_err(|e| Error::Checkpoint(format!("`{key}`: {e}")))?;
        }
        let params = self.tensors.iter().filter(|t| t.name.starts_with("param/")).count();
        if params != model.store.len() {
            return Err(Error::Checkpoint(format!("{params} stored parameters, model has {}", model.store.len())));
        }
        Ok(model)
    }

    /// Restores a trainer so that further steps continue the saved run.
    pub fn trainer(&self, data: Dataset) -> Result<Trainer> {
        let model = self.model()?;
        let index = self.index();
        let restore = |prefix: &str, ids: &[tapegrad::ParamId], step: u64| -> Result<AdamState> {
            let mut adam = AdamState::new(&model.store, ids.to_vec(), AdamConfig::default());
            for (slot, &id) in ids.iter().enumerate() {
                let (km, kv) = moment_keys(prefix, model.store.name(id));
                let get = |k: &str| index.get(k).map(|t| t.data.clone()).ok_or_else(|| Error::Checkpoint(format!("missing `{k}`")));
                adam.set_moments(slot, get(&km)?, get(&kv)?)?;
            }
            adam.step = step;
            Ok(adam)
        };
        let adam_eg = restore("adam_eg", &model.eg_params, self.adam_eg_step)?;
        let adam_d = restore("adam_d", &model.d_params, self.adam_d_step)?;
        let mut trainer = Trainer::new(model, data, 0, self.min_crop as usize)?;
        trainer.adam_eg = adam_eg;
        trainer.adam_d = adam_d;
        trainer.rng = self.rng.restore();
        trainer.iteration = self.iteration;
        Ok(trainer)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        for text in [&self.config_text, &self.model_spec] {
            b.extend_from_slice(&(text.len() as u64).to_le_bytes());
            b.extend_from_slice(text.as_bytes());
        }
        for v in [self.iteration, self.min_crop, self.adam_eg_step, self.adam_d_step] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&self.rng.seed);
        b.extend_from_slice(&self.rng.stream.to_le_bytes());
        b.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        b.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for t in &self.tensors {
            b.extend_from_slice(&(t.name.len() as u64).to_le_bytes());
            b.extend_from_slice(t.name.as_bytes());
            b.extend_from_slice(&(t.shape.len() as u64).to_le_bytes());
            for &d in &t.shape {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config_text = r.string()?;
        let model_spec = r.string()?;
        let iteration = r.u64()?;
        let min_crop = r.u64()?;
        let adam_eg_step = r.u64()?;
        let adam_d_step = r.u64()?;
        let rng = RngState { seed: r.array()?, stream: r.u64()?, word_pos: u128::from_le_bytes(r.array()?) };
        let count = r.u64()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u64()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let n = n.filter(|&n| n <= r.remaining() / 8).ok_or_else(|| Error::Checkpoint(format!("`{name}`: bad shape {shape:?}")))?;
            let data = (0..n).map(|_| r.array().map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Checkpoint { config_text, model_spec, iteration, min_crop, adam_eg_step, adam_d_step, rng, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(path.display().to_string()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        let raw = self.take(n)?.to_vec();
        String::from_utf8(raw).map_err(|_| Error::Checkpoint("text section is not UTF-8".into()))
    }
}

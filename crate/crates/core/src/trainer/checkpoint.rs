//! Binary checkpoint: parameters, optimizer moments, stream position and
//! the training log, guarded by the configuration digest.
//!
//! Layout (little-endian): `LDCK`, u32 version, 32-byte digest, u8 stage,
//! u64 epoch, u64 k, parameter tensors, optimizer states, rng state, log.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{config_hash, TrainConfig};
use super::log::{LogRow, Stage, TrainingLog};
use super::{Model, Trainer};
use crate::env::MapRegion;
use crate::error::{Error, Result};
use crate::numkit::{AdamConfig, AdamState, ParamGroup, ParamId};

const MAGIC: &[u8; 4] = b"LDCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(self.word_pos);
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedTensor {
    pub name: String,
    pub group: ParamGroup,
    pub requires_grad: bool,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub stage: Stage,
    pub epoch: usize,
    pub k: usize,
    pub tensors: Vec<SavedTensor>,
    pub adam: Vec<(String, AdamState)>,
    pub rng: RngState,
    pub log: TrainingLog,
}

impl Checkpoint {
    pub fn capture(t: &Trainer, map: &MapRegion) -> Self {
        Self {
            config_hash: config_hash(&t.cfg, map),
            stage: t.stage,
            epoch: t.epoch,
            k: t.model.ac.config.k,
            tensors: tensors_of(&t.model),
            adam: t.adam.clone(),
            rng: RngState::of(&t.rng),
            log: t.log.clone(),
        }
    }

    /// A checkpoint of a finished stage (no optimizer state).
    pub fn of_model(model: &Model, cfg: &TrainConfig, map: &MapRegion, stage: Stage, epoch: usize, log: &TrainingLog) -> Self {
        Self {
            config_hash: config_hash(cfg, map),
            stage,
            epoch,
            k: model.ac.config.k,
            tensors: tensors_of(model),
            adam: Vec::new(),
            rng: RngState::of(&super::seeded(cfg.seed, 0)),
            log: log.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.bytes(&self.config_hash);
        w.u8(match self.stage {
            Stage::Pretrain => 0,
            Stage::Imagine => 1,
        });
        w.u64(self.epoch as u64);
        w.u64(self.k as u64);
        w.u64(self.tensors.len() as u64);
        for t in &self.tensors {
            w.str(&t.name);
            w.str(t.group.as_str());
            w.u8(t.requires_grad as u8);
            w.u64(t.shape.len() as u64);
            t.shape.iter().for_each(|&d| w.u64(d as u64));
            w.f64s(&t.values);
        }
        w.u64(self.adam.len() as u64);
        for (name, s) in &self.adam {
            w.str(name);
            let c = &s.config;
            for v in [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay] {
                w.f64(v);
            }
            w.u64(c.total_steps);
            w.u8(c.clip_norm.is_some() as u8);
            w.f64(c.clip_norm.unwrap_or(0.0));
            w.u64(s.step);
            w.u64(s.params.len() as u64);
            for (k, id) in s.params.iter().enumerate() {
                w.u64(id.index() as u64);
                w.f64s(&s.first_moment[k]);
                w.f64s(&s.second_moment[k]);
            }
        }
        w.bytes(&self.rng.seed);
        w.u64(self.rng.stream);
        w.bytes(&self.rng.word_pos.to_le_bytes());
        w.u64(self.log.rows.len() as u64);
        for r in &self.log.rows {
            w.u64(r.epoch as u64);
            w.str(r.stage.as_str());
            w.f64(r.train_loss);
            w.f64(r.val_loss);
            w.u8(r.test_mae.is_some() as u8);
            w.f64(r.test_mae.unwrap_or(0.0));
            w.f64(r.lr);
            w.f64(r.seconds);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stage = match r.u8()? {
            0 => Stage::Pretrain,
            1 => Stage::Imagine,
            s => return Err(Error::Checkpoint(format!("unknown stage tag {s}"))),
        };
        let epoch = r.u64()? as usize;
        let k = r.u64()? as usize;
        let n = r.len()?;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.str()?;
            let g = r.str()?;
            let group = ParamGroup::parse(&g).ok_or_else(|| Error::Checkpoint(format!("unknown group `{g}`")))?;
            let requires_grad = r.u8()? != 0;
            let nd = r.len()?;
            let shape = (0..nd).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let values = r.f64s()?;
            if values.len() != shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!("tensor `{name}` has {} values for shape {shape:?}", values.len())));
            }
            tensors.push(SavedTensor { name, group, requires_grad, shape, values });
        }
        let na = r.len()?;
        let mut adam = Vec::with_capacity(na);
        for _ in 0..na {
            let name = r.str()?;
            let (lr, beta1, beta2, eps, weight_decay) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let total_steps = r.u64()?;
            let has_clip = r.u8()? != 0;
            let clip = r.f64()?;
            let step = r.u64()?;
            let np = r.len()?;
            let mut params = Vec::with_capacity(np);
            let mut m1 = Vec::with_capacity(np);
            let mut m2 = Vec::with_capacity(np);
            for _ in 0..np {
                params.push(ParamId::from_index(r.u64()? as usize));
                m1.push(r.f64s()?);
                m2.push(r.f64s()?);
            }
            let config = AdamConfig { lr, beta1, beta2, eps, weight_decay, total_steps, clip_norm: has_clip.then_some(clip) };
            adam.push((name, AdamState { config, params, first_moment: m1, second_moment: m2, step }));
        }
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let nl = r.len()?;
        let mut log = TrainingLog::default();
        for _ in 0..nl {
            let epoch = r.u64()? as usize;
            let s = r.str()?;
            let stage = Stage::parse(&s).ok_or_else(|| Error::Checkpoint(format!("unknown stage `{s}`")))?;
            let (train_loss, val_loss) = (r.f64()?, r.f64()?);
            let has_mae = r.u8()? != 0;
            let mae = r.f64()?;
            let (lr, seconds) = (r.f64()?, r.f64()?);
            log.rows.push(LogRow { epoch, stage, train_loss, val_loss, test_mae: has_mae.then_some(mae), lr, seconds });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { config_hash, stage, epoch, k, tensors, adam, rng: RngState { seed, stream, word_pos }, log })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Rebuilds the model for `cfg`, refusing a different configuration.
    pub fn restore_model(&self, cfg: &TrainConfig, map: &MapRegion) -> Result<Model> {
        let expected = config_hash(cfg, map);
        if expected != self.config_hash {
            return Err(Error::Checkpoint(format!(
                "configuration digest mismatch: checkpoint {}, current config {}",
                hex(&self.config_hash),
                hex(&expected)
            )));
        }
        let mut model = Model::new(cfg, map)?;
        if model.store.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                model.store.len()
            )));
        }
        let ids: Vec<ParamId> = model.store.ids().collect();
        for (id, saved) in ids.into_iter().zip(&self.tensors) {
            let e = model.store.entry(id);
            if e.name != saved.name || e.tensor.shape() != saved.shape.as_slice() || e.group != saved.group {
                return Err(Error::Checkpoint(format!("tensor `{}` does not match the model layout", saved.name)));
            }
            let t = model.store.tensor_mut(id);
            t.values_mut().copy_from_slice(&saved.values);
            t.set_requires_grad(saved.requires_grad);
        }
        model.set_k(self.k);
        Ok(model)
    }

    /// Resumes a run exactly where it was captured.
    pub fn restore_trainer(&self, cfg: &TrainConfig, map: &MapRegion) -> Result<Trainer> {
        let model = self.restore_model(cfg, map)?;
        for (_, s) in &self.adam {
            for (k, id) in s.params.iter().enumerate() {
                if id.index() >= model.store.len() || model.store.tensor(*id).len() != s.first_moment[k].len() {
                    return Err(Error::Checkpoint("optimizer state does not match the model".into()));
                }
            }
        }
        Ok(Trainer {
            cfg: cfg.clone(),
            model,
            stage: self.stage,
            epoch: self.epoch,
            rng: self.rng.restore(),
            adam: self.adam.clone(),
            log: self.log.clone(),
        })
    }
}

fn tensors_of(model: &Model) -> Vec<SavedTensor> {
    model
        .store
        .entries()
        .iter()
        .map(|e| SavedTensor {
            name: e.name.clone(),
            group: e.group,
            requires_grad: e.tensor.requires_grad(),
            shape: e.tensor.shape().to_vec(),
            values: e.tensor.values().to_vec(),
        })
        .collect()
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_bits().to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.f64(*x));
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    /// A count that must fit in the remaining bytes.
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > (self.buf.len() - self.pos) as u64 {
            return Err(Error::Checkpoint(format!("implausible length {n} at byte {}", self.pos)));
        }
        Ok(n as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

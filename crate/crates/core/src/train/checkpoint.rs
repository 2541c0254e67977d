//! Binary checkpoint format (little-endian):
//!
//! ```text
//! "GLCK" | u32 version | u64 len | JSON metadata (len bytes)
//! u32 count | count × tensor record
//! tensor record: u16 name_len | name | u8 dtype | u8 rank | rank × u64 dim | data
//! ```
//!
//! dtype 1 is f64. Tensor names are `<network>/<parameter>` and
//! `<network>/optim/{m,v}/<index>`.

use std::cell::RefCell;
use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::atomic::write_atomic;
use super::config::TrainConfig;
use super::gan::{BeganState, GanModel, Learner, ModelFamily};
use super::TrainError;
use crate::nn::{build_network, Network, NetworkSpec, ParamEntry, Parameters};
use crate::tensor::{OptimizerConfig, OptimizerState, Precision, RngSnapshot, RngState, Tensor, RNG_ALGORITHM};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GLCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub const GENERATOR: &str = "generator";
pub const DISCRIMINATOR: &str = "discriminator";
pub const ENCODER: &str = "encoder";

/// Complete training state of a model, or just its generator when
/// exported for black-box access.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub family: ModelFamily,
    pub config: TrainConfig,
    pub step: u64,
    pub epoch: u64,
    pub rng: RngSnapshot,
    pub began: Option<BeganState>,
    /// Metrics file the training run appends to.
    pub metrics_path: Option<String>,
    pub generator: Network,
    pub discriminator: Option<Network>,
    pub encoder: Option<Network>,
    /// Optimizer memory keyed by network name.
    pub optimizers: Vec<(String, OptimizerState)>,
}

impl Checkpoint {
    pub fn from_model(model: &GanModel, config: &TrainConfig, step: u64, epoch: u64, rng: &RngState) -> Self {
        let mut optimizers = vec![
            (GENERATOR.to_string(), model.generator.opt.clone()),
            (DISCRIMINATOR.to_string(), model.discriminator.opt.clone()),
        ];
        if let Some(e) = &model.encoder {
            optimizers.push((ENCODER.to_string(), e.opt.clone()));
        }
        Self {
            family: model.family,
            config: config.clone(),
            step,
            epoch,
            rng: rng.snapshot(),
            began: model.began,
            metrics_path: None,
            generator: model.generator.net.clone(),
            discriminator: Some(model.discriminator.net.clone()),
            encoder: model.encoder.as_ref().map(|e| e.net.clone()),
            optimizers,
        }
    }

    /// The generator alone, as handed to a black-box consumer.
    pub fn generator_only(&self) -> Checkpoint {
        Checkpoint { discriminator: None, encoder: None, optimizers: vec![], began: None, ..self.clone() }
    }

    pub fn into_model(self) -> Result<GanModel, TrainError> {
        let discriminator = self.discriminator.ok_or(TrainError::MissingNetwork(DISCRIMINATOR))?;
        let mut opts = self.optimizers;
        let mut take = |name: &'static str| {
            let i = opts.iter().position(|(n, _)| n == name).ok_or(TrainError::MissingNetwork(name))?;
            Ok::<_, TrainError>(opts.remove(i).1)
        };
        let generator = Learner { opt: take(GENERATOR)?, net: self.generator };
        let discriminator = Learner { opt: take(DISCRIMINATOR)?, net: discriminator };
        let encoder = match self.encoder {
            Some(net) => Some(Learner { opt: take(ENCODER)?, net }),
            None => None,
        };
        Ok(GanModel { family: self.family, generator, discriminator, encoder, began: self.began })
    }

    fn networks(&self) -> Vec<(&'static str, &Network)> {
        let mut v = vec![(GENERATOR, &self.generator)];
        if let Some(d) = &self.discriminator {
            v.push((DISCRIMINATOR, d));
        }
        if let Some(e) = &self.encoder {
            v.push((ENCODER, e));
        }
        v
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerMeta {
    network: String,
    config: OptimizerConfig,
    precision: Precision,
    t: u64,
    slots: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    family: ModelFamily,
    config: TrainConfig,
    step: u64,
    epoch: u64,
    rng_algorithm: String,
    rng: RngSnapshot,
    began: Option<BeganState>,
    metrics_path: Option<String>,
    specs: Vec<(String, NetworkSpec)>,
    optimizers: Vec<OptimizerMeta>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F64);
    out.push(shape.len() as u8);
    for d in shape {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>, TrainError> {
    let meta = Meta {
        family: ckpt.family,
        config: ckpt.config.clone(),
        step: ckpt.step,
        epoch: ckpt.epoch,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        rng: ckpt.rng,
        began: ckpt.began,
        metrics_path: ckpt.metrics_path.clone(),
        specs: ckpt.networks().into_iter().map(|(n, net)| (n.to_string(), net.spec.clone())).collect(),
        optimizers: ckpt
            .optimizers
            .iter()
            .map(|(n, o)| OptimizerMeta { network: n.clone(), config: o.config, precision: o.precision, t: o.t, slots: o.m.len() })
            .collect(),
    };
    let json = serde_json::to_vec(&meta).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let mut table = Vec::new();
    let mut count = 0u32;
    for (net_name, net) in ckpt.networks() {
        for e in net.params.entries() {
            put_tensor(&mut table, &format!("{net_name}/{}", e.name), e.tensor.shape(), e.tensor.data());
            count += 1;
        }
    }
    for (net_name, o) in &ckpt.optimizers {
        for (kind, slots) in [("m", &o.m), ("v", &o.v)] {
            for (i, s) in slots.iter().enumerate() {
                put_tensor(&mut table, &format!("{net_name}/optim/{kind}/{i}"), &[s.len()], s);
                count += 1;
            }
        }
    }
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&table);
    Ok(out)
}

/// Writes via a temporary file and rename, so readers never observe a
/// partial checkpoint.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), TrainError> {
    Ok(write_atomic(path, &encode_checkpoint(ckpt)?)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, TrainError> {
    CheckpointReader::open(path)?.load_all()
}

struct TableEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

/// Reads tensors on demand and logs every tensor name it reads.
pub struct CheckpointReader {
    file: RefCell<File>,
    meta: Meta,
    table: Vec<TableEntry>,
    log: RefCell<Vec<String>>,
}

fn corrupt(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>, TrainError> {
    let mut buf = vec![0; n];
    r.read_exact(&mut buf).map_err(|_| corrupt(format!("truncated checkpoint while reading {what}")))?;
    Ok(buf)
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64, TrainError> {
    Ok(u64::from_le_bytes(read_exact(r, 8, what)?.try_into().unwrap()))
}

impl CheckpointReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let file = File::open(path.as_ref())?;
        let file_len = file.metadata()?.len();
        let mut r = BufReader::new(file);
        let magic = read_exact(&mut r, 4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(corrupt(format!("bad checkpoint magic {magic:02x?}")));
        }
        let version = u32::from_le_bytes(read_exact(&mut r, 4, "version")?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
        }
        let len = read_u64(&mut r, "metadata length")?;
        if len > file_len {
            return Err(corrupt("metadata length exceeds file size"));
        }
        let json = read_exact(&mut r, len as usize, "metadata")?;
        let meta: Meta = serde_json::from_slice(&json).map_err(|e| corrupt(format!("bad metadata: {e}")))?;
        if meta.rng_algorithm != RNG_ALGORITHM {
            return Err(corrupt(format!("checkpoint uses rng `{}`", meta.rng_algorithm)));
        }
        let count = u32::from_le_bytes(read_exact(&mut r, 4, "tensor count")?.try_into().unwrap());
        let mut table = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(read_exact(&mut r, 2, "tensor name")?.try_into().unwrap());
            let name = String::from_utf8(read_exact(&mut r, name_len as usize, "tensor name")?)
                .map_err(|_| corrupt("tensor name is not UTF-8"))?;
            let head = read_exact(&mut r, 2, "tensor header")?;
            if head[0] != DTYPE_F64 {
                return Err(corrupt(format!("tensor `{name}` has unknown dtype {}", head[0])));
            }
            let shape = (0..head[1]).map(|_| read_u64(&mut r, "tensor dims").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let offset = r.stream_position()?;
            let bytes = shape.iter().product::<usize>() as u64 * 8;
            if offset + bytes > file_len {
                return Err(corrupt(format!("truncated checkpoint inside tensor `{name}`")));
            }
            r.seek_relative(bytes as i64)?;
            table.push(TableEntry { name, shape, offset });
        }
        if r.stream_position()? != file_len {
            return Err(corrupt("trailing bytes after tensor table"));
        }
        Ok(Self { file: RefCell::new(r.into_inner()), meta, table, log: RefCell::new(Vec::new()) })
    }

    pub fn family(&self) -> ModelFamily {
        self.meta.family
    }

    pub fn config(&self) -> &TrainConfig {
        &self.meta.config
    }

    /// Training steps completed when the checkpoint was written.
    pub fn step(&self) -> u64 {
        self.meta.step
    }

    pub fn has_network(&self, name: &str) -> bool {
        self.meta.specs.iter().any(|(n, _)| n == name)
    }

    /// Names of tensors read so far, in order.
    pub fn accessed(&self) -> Vec<String> {
        self.log.borrow().clone()
    }

    fn tensor(&self, name: &str) -> Result<Tensor, TrainError> {
        let e = self.table.iter().find(|e| e.name == name).ok_or_else(|| corrupt(format!("missing tensor `{name}`")))?;
        let n: usize = e.shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        {
            let mut f = self.file.borrow_mut();
            f.seek(SeekFrom::Start(e.offset))?;
            f.read_exact(&mut buf).map_err(|_| corrupt(format!("truncated tensor `{name}`")))?;
        }
        self.log.borrow_mut().push(name.to_string());
        let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Tensor::new(e.shape.clone(), data)?)
    }

    /// Rebuilds one network, reading only that network's tensors.
    pub fn network(&self, name: &'static str) -> Result<Network, TrainError> {
        let spec = self
            .meta
            .specs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.clone())
            .ok_or(TrainError::MissingNetwork(name))?;
        // layout (names, shapes, trainable flags) comes from the spec
        let layout = build_network(&spec, &mut RngState::new(0))?;
        let mut entries = Vec::with_capacity(layout.len());
        for e in layout.entries() {
            let t = self.tensor(&format!("{name}/{}", e.name))?;
            if t.shape() != e.tensor.shape() {
                return Err(corrupt(format!("tensor `{name}/{}` has shape {:?}, expected {:?}", e.name, t.shape(), e.tensor.shape())));
            }
            entries.push(ParamEntry { name: e.name.clone(), tensor: t, trainable: e.trainable });
        }
        Ok(Network { spec, params: Parameters::new(entries)? })
    }

    pub fn generator(&self) -> Result<Network, TrainError> {
        self.network(GENERATOR)
    }

    pub fn discriminator(&self) -> Result<Network, TrainError> {
        self.network(DISCRIMINATOR)
    }

    pub fn load_all(&self) -> Result<Checkpoint, TrainError> {
        let generator = self.generator()?;
        let discriminator = self.has_network(DISCRIMINATOR).then(|| self.discriminator()).transpose()?;
        let encoder = self.has_network(ENCODER).then(|| self.network(ENCODER)).transpose()?;
        let mut optimizers = Vec::new();
        for o in &self.meta.optimizers {
            let slot = |kind: &str| -> Result<Vec<Vec<f64>>, TrainError> {
                (0..o.slots).map(|i| Ok(self.tensor(&format!("{}/optim/{kind}/{i}", o.network))?.into_data())).collect()
            };
            optimizers.push((o.network.clone(), OptimizerState { config: o.config, precision: o.precision, m: slot("m")?, v: slot("v")?, t: o.t }));
        }
        Ok(Checkpoint {
            family: self.meta.family,
            config: self.meta.config.clone(),
            step: self.meta.step,
            epoch: self.meta.epoch,
            rng: self.meta.rng,
            began: self.meta.began,
            metrics_path: self.meta.metrics_path.clone(),
            generator,
            discriminator,
            encoder,
            optimizers,
        })
    }
}

//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "HYCB"  u32 version
//! u32 len, UTF-8 key=value snapshot (run config + vocabulary sizes + arities)
//! u32 entry count
//! per entry: u32 len, UTF-8 name; u32 rank; rank x u32 dims; f32 payload
//! u64 CRC-64/ECMA-182 of every preceding byte
//! ```
//!
//! Buffers (batch-norm running statistics) are stored after the parameters
//! with a `buffer:` name prefix.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_ECMA_182};
use thiserror::Error;

use crate::config::{parse_key_value, ConfigError, RunConfig};
use crate::model::{Model, ModelError, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HYCB";
pub const FORMAT_VERSION: u32 = 1;
const BUFFER_PREFIX: &str = "buffer:";
const CHECKSUM: Crc<u64> = Crc::<u64>::new(&CRC_64_ECMA_182);

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (this build reads {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("invalid config snapshot: {0}")]
    Config(#[from] ConfigError),
    #[error("checkpoint does not match its config: {0}")]
    Shape(#[from] ModelError),
    #[error("vocabulary mismatch: checkpoint has {ckpt_entities} entities / {ckpt_relations} relations, dataset has {data_entities} / {data_relations}")]
    VocabMismatch {
        ckpt_entities: usize,
        ckpt_relations: usize,
        data_entities: usize,
        data_relations: usize,
    },
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

fn snapshot(model: &Model<f32>) -> String {
    let arities: Vec<String> = model.arities().iter().map(usize::to_string).collect();
    format!(
        "{}num_entities={}\nnum_relations={}\narities={}\n",
        model.config().to_key_value(),
        model.num_entities(),
        model.num_relations(),
        arities.join(",")
    )
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_str(out, name);
    put_u32(out, t.rank());
    for &d in t.shape() {
        put_u32(out, d);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(model: &Model<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_str(&mut out, &snapshot(model));
    put_u32(&mut out, model.params().len() + model.buffers().len());
    for (name, t) in model.params().iter() {
        put_tensor(&mut out, name, t);
    }
    for (name, t) in model.buffers().iter() {
        put_tensor(&mut out, &format!("{BUFFER_PREFIX}{name}"), t);
    }
    let sum = CHECKSUM.checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Malformed("non-UTF-8 text".into()))
    }
}

fn parse_snapshot(text: &str) -> Result<(RunConfig, usize, usize, BTreeSet<usize>)> {
    let mut config_lines = String::new();
    let (mut ne, mut nr, mut arities) = (None, None, None);
    for (_, key, value) in parse_key_value(text)? {
        let bad = || CheckpointError::Malformed(format!("bad {key} value {value:?}"));
        match key.as_str() {
            "num_entities" => ne = Some(value.parse().map_err(|_| bad())?),
            "num_relations" => nr = Some(value.parse().map_err(|_| bad())?),
            "arities" => {
                arities = Some(
                    value
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse().map_err(|_| bad()))
                        .collect::<Result<BTreeSet<usize>>>()?,
                )
            }
            _ => config_lines.push_str(&format!("{key}={value}\n")),
        }
    }
    let missing = |k: &str| CheckpointError::Malformed(format!("snapshot lacks {k}"));
    Ok((
        RunConfig::from_key_value(&config_lines)?,
        ne.ok_or_else(|| missing("num_entities"))?,
        nr.ok_or_else(|| missing("num_relations"))?,
        arities.ok_or_else(|| missing("arities"))?,
    ))
}

pub fn decode(bytes: &[u8]) -> Result<Model<f32>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(CheckpointError::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = CHECKSUM.checksum(body);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let (config, ne, nr, arities) = parse_snapshot(&r.string()?)?;
    let count = r.u32()?;
    let mut params = ParamStore::new();
    let mut buffers = ParamStore::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Malformed(format!("{name}: shape overflow")))?;
        let payload = r.take(len.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(ModelError::from)?;
        match name.strip_prefix(BUFFER_PREFIX) {
            Some(b) => buffers.insert(b, tensor),
            None => params.insert(name, tensor),
        }
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes before the checksum",
            body.len() - r.pos
        )));
    }
    Ok(Model::from_parts(config, ne, nr, arities, params, buffers)?)
}

pub fn save(model: &Model<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode(model)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Model<f32>> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

/// Refuses a model whose vocabulary sizes differ from the dataset's.
pub fn check_vocab(model: &Model<f32>, num_entities: usize, num_relations: usize) -> Result<()> {
    if model.num_entities() != num_entities || model.num_relations() != num_relations {
        return Err(CheckpointError::VocabMismatch {
            ckpt_entities: model.num_entities(),
            ckpt_relations: model.num_relations(),
            data_entities: num_entities,
            data_relations: num_relations,
        });
    }
    Ok(())
}

//! Binary checkpoint format.
//!
//! ```text
//! "AEGN"  u32 version
//! repeated: u32 name_len, name (UTF-8), u32 rank, u32 dims[rank], f32 data[∏dims]
//! u32 CRC32 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian. Metadata travels as empty
//! rank-1 records named `@meta:key=value`; generator and discriminator tensors
//! are prefixed `g.` and `d.`, optimizer moments `opt.{g,d}.{m,v}:`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::autodiff::{AdamState, ParamStore, Tensor};
use crate::tfr::{StftConfig, WindowKind};

use super::{CasNetConfig, ModelMeta, ModelParams, Norm, PatchDiscConfig, PatchMode, UBlockConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AEGN";
pub const CHECKPOINT_VERSION: u32 = 1;

const META_PREFIX: &str = "@meta:";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint mismatch: {0}")]
    VersionMismatch(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::CorruptCheckpoint(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u32(out, d as u32);
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn meta_pairs(p: &ModelParams) -> Vec<(String, String)> {
    let m = &p.meta;
    let g = &m.generator;
    let d = &m.discriminator;
    let mut pairs = vec![
        ("g.n_blocks", g.n_blocks.to_string()),
        ("g.depth", g.ublock.depth.to_string()),
        ("g.base", g.ublock.base_channels.to_string()),
        ("g.norm", g.ublock.norm.name().to_string()),
        ("d.patch", d.patch_size.to_string()),
        ("d.base", d.base_channels.to_string()),
        ("d.layers", d.n_feature_layers.to_string()),
        ("d.norm", d.norm.name().to_string()),
        ("d.mode", d.mode.name().to_string()),
        ("stft.window_len", m.stft.window_len.to_string()),
        ("stft.n_freq", m.stft.n_freq.to_string()),
        ("stft.n_time", m.stft.n_time.to_string()),
        ("stft.window", m.stft.window.name().to_string()),
        ("floor_db", m.floor_db.to_string()),
        ("epoch", m.epoch.to_string()),
        ("seed", m.seed.to_string()),
    ];
    if let Some(s) = &p.g_opt {
        pairs.push(("opt.g.step", s.step.to_string()));
    }
    if let Some(s) = &p.d_opt {
        pairs.push(("opt.d.step", s.step.to_string()));
    }
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn encode_checkpoint(p: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    for (k, v) in meta_pairs(p) {
        put_record(&mut out, &format!("{META_PREFIX}{k}={v}"), &[0], &[]);
    }
    for (prefix, store) in [("g.", &p.generator), ("d.", &p.discriminator)] {
        for (name, t) in store.iter() {
            put_record(&mut out, &format!("{prefix}{name}"), t.shape(), t.data());
        }
    }
    for (tag, store, opt) in [("g", &p.generator, &p.g_opt), ("d", &p.discriminator, &p.d_opt)] {
        if let Some(state) = opt {
            for (kind, buffers) in [("m", &state.m), ("v", &state.v)] {
                for ((name, t), buf) in store.iter().zip(buffers) {
                    put_record(&mut out, &format!("opt.{tag}.{kind}:{name}"), t.shape(), buf);
                }
            }
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt("record runs past the end of the file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct Record {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn parse<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T, CheckpointError> {
    let raw = meta
        .get(key)
        .ok_or_else(|| corrupt(format!("missing metadata key {key}")))?;
    raw.parse()
        .map_err(|_| corrupt(format!("bad metadata value {key}={raw}")))
}

fn parse_with<T>(meta: &BTreeMap<String, String>, key: &str, f: impl Fn(&str) -> Option<T>) -> Result<T, CheckpointError> {
    let raw: String = parse(meta, key)?;
    f(&raw).ok_or_else(|| corrupt(format!("bad metadata value {key}={raw}")))
}

fn meta_from(map: &BTreeMap<String, String>) -> Result<ModelMeta, CheckpointError> {
    Ok(ModelMeta {
        generator: CasNetConfig {
            n_blocks: parse(map, "g.n_blocks")?,
            ublock: UBlockConfig {
                depth: parse(map, "g.depth")?,
                base_channels: parse(map, "g.base")?,
                norm: parse_with(map, "g.norm", Norm::from_name)?,
            },
        },
        discriminator: PatchDiscConfig {
            patch_size: parse(map, "d.patch")?,
            base_channels: parse(map, "d.base")?,
            n_feature_layers: parse(map, "d.layers")?,
            norm: parse_with(map, "d.norm", Norm::from_name)?,
            mode: parse_with(map, "d.mode", PatchMode::from_name)?,
        },
        stft: StftConfig {
            window_len: parse(map, "stft.window_len")?,
            n_freq: parse(map, "stft.n_freq")?,
            n_time: parse(map, "stft.n_time")?,
            window: parse_with(map, "stft.window", WindowKind::from_name)?,
        },
        floor_db: parse(map, "floor_db")?,
        epoch: parse(map, "epoch")?,
        seed: parse(map, "seed")?,
    })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams, CheckpointError> {
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("missing AEGN signature"));
    }
    let (body, footer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([footer[0], footer[1], footer[2], footer[3]]);
    if crc32fast::hash(body) != stored {
        return Err(corrupt("CRC32 mismatch (truncated or damaged file)"));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch(format!(
            "format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }

    let mut meta = BTreeMap::new();
    let mut records = Vec::new();
    while r.pos < body.len() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| corrupt("record name is not UTF-8"))?
            .to_owned();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| corrupt("tensor size overflows"))?;
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| corrupt("tensor size overflows"))?)?;
        if let Some(kv) = name.strip_prefix(META_PREFIX) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| corrupt(format!("malformed metadata record {name}")))?;
            meta.insert(k.to_owned(), v.to_owned());
            continue;
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(Record { name, shape, data });
    }

    let g_steps = optional_step(&meta, "opt.g.step")?;
    let d_steps = optional_step(&meta, "opt.d.step")?;
    let meta = meta_from(&meta)?;
    meta.validate()
        .map_err(|e| CheckpointError::VersionMismatch(e.to_string()))?;

    let mut generator = ParamStore::new();
    let mut discriminator = ParamStore::new();
    let mut moments: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    for rec in records {
        let tensor = || {
            Tensor::new(rec.shape.clone(), rec.data.clone()).map_err(|e| corrupt(e.to_string()))
        };
        let dup = |e: crate::autodiff::TensorError| corrupt(e.to_string());
        if rec.name.starts_with("opt.") {
            moments.insert(rec.name.clone(), rec.data.clone());
        } else if let Some(n) = rec.name.strip_prefix("g.") {
            generator.insert(n, tensor()?).map_err(dup)?;
        } else if let Some(n) = rec.name.strip_prefix("d.") {
            discriminator.insert(n, tensor()?).map_err(dup)?;
        } else {
            return Err(corrupt(format!("unexpected record {}", rec.name)));
        }
    }

    let mut params = ModelParams {
        meta,
        generator,
        discriminator,
        g_opt: None,
        d_opt: None,
    };
    params
        .check_layout()
        .map_err(CheckpointError::VersionMismatch)?;
    params.g_opt = g_steps
        .map(|step| restore_state("g", step, &params.generator, &moments))
        .transpose()?;
    params.d_opt = d_steps
        .map(|step| restore_state("d", step, &params.discriminator, &moments))
        .transpose()?;
    Ok(params)
}

fn optional_step(meta: &BTreeMap<String, String>, key: &str) -> Result<Option<u64>, CheckpointError> {
    meta.contains_key(key).then(|| parse(meta, key)).transpose()
}

fn restore_state(
    tag: &str,
    step: u64,
    store: &ParamStore<f32>,
    moments: &BTreeMap<String, Vec<f32>>,
) -> Result<AdamState<f32>, CheckpointError> {
    let mut state = AdamState::new(store);
    state.step = step;
    for (kind, buffers) in [("m", &mut state.m), ("v", &mut state.v)] {
        for ((name, t), buf) in store.iter().zip(buffers.iter_mut()) {
            let key = format!("opt.{tag}.{kind}:{name}");
            let data = moments
                .get(&key)
                .ok_or_else(|| corrupt(format!("missing optimizer record {key}")))?;
            if data.len() != t.numel() {
                return Err(corrupt(format!("optimizer record {key} has the wrong size")));
            }
            buf.copy_from_slice(data);
        }
    }
    Ok(state)
}

pub fn save_checkpoint(p: &ModelParams, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(p))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams, CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}

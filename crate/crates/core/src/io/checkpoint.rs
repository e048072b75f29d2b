//! Model checkpoints: a JSON manifest followed by named `f64` tensors.
//!
//! ```text
//! "MCKP"  u16 version  u32 manifest length  manifest JSON
//! u32 tensor count, then per tensor:
//!   u16 name length, name ("layer/tensor")  u8 kind (0 parameter, 1 buffer)
//!   u8 dtype (1 = f64)  u8 rank  rank x u32 dims  values as f64 little-endian
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderDims, Layer, ModelParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MCKP";
pub const VERSION: u16 = 1;
const DTYPE_F64: u8 = 1;
const KIND_PARAM: u8 = 0;
const KIND_BUFFER: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
    pub phase: String,
    pub metrics: BTreeMap<String, f64>,
    pub dims: EncoderDims,
    /// Depth of every layer within its branch.
    pub depths: BTreeMap<String, usize>,
}

impl CheckpointManifest {
    pub fn new(params: &ModelParams, config_hash: &str, seed: u64, epoch: usize, phase: &str) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            seed,
            epoch,
            phase: phase.to_string(),
            metrics: BTreeMap::new(),
            dims: params.dims.clone(),
            depths: params.layers.iter().map(|(k, l)| (k.clone(), l.depth)).collect(),
        }
    }
}

fn write_tensor<W: Write>(w: &mut W, name: &str, kind: u8, t: &ArrayD<f64>) -> std::io::Result<()> {
    w.write_u16::<LittleEndian>(name.len() as u16)?;
    w.write_all(name.as_bytes())?;
    w.write_u8(kind)?;
    w.write_u8(DTYPE_F64)?;
    w.write_u8(t.ndim() as u8)?;
    for &d in t.shape() {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    let mut buf = Vec::with_capacity(8 * t.len());
    for &v in t.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, manifest: &CheckpointManifest, mut w: W) -> Result<()> {
    let json = serde_json::to_vec(manifest)?;
    let count: usize = params.layers.values().map(|l| l.tensors.len() + l.buffers.len()).sum();
    let io = |e| Error::io("<checkpoint>", e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_u16::<LittleEndian>(VERSION).map_err(io)?;
    w.write_u32::<LittleEndian>(json.len() as u32).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    w.write_u32::<LittleEndian>(count as u32).map_err(io)?;
    for (lname, layer) in &params.layers {
        for (kind, map) in [(KIND_PARAM, &layer.tensors), (KIND_BUFFER, &layer.buffers)] {
            for (tname, t) in map {
                write_tensor(&mut w, &format!("{lname}/{tname}"), kind, t).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn save_checkpoint(params: &ModelParams, manifest: &CheckpointManifest, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(params, manifest, BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_checkpoint<R: Read>(mut r: R, path: &Path) -> Result<(ModelParams, CheckpointManifest)> {
    let corrupt = |reason: String| Error::corrupt(path, reason);
    let eof = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::corrupt(path, "file is truncated")
        } else {
            Error::io(path, e)
        }
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof)?;
    if &magic != MAGIC {
        return Err(corrupt(format!("bad magic {magic:?}")));
    }
    let version = r.read_u16::<LittleEndian>().map_err(eof)?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let json_len = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let mut json = Vec::new();
    r.by_ref().take(json_len as u64).read_to_end(&mut json).map_err(eof)?;
    if json.len() != json_len {
        return Err(corrupt("file is truncated".into()));
    }
    let manifest: CheckpointManifest =
        serde_json::from_slice(&json).map_err(|e| corrupt(format!("bad manifest: {e}")))?;
    let count = r.read_u32::<LittleEndian>().map_err(eof)?;
    let mut layers: BTreeMap<String, Layer> = BTreeMap::new();
    for _ in 0..count {
        let len = r.read_u16::<LittleEndian>().map_err(eof)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(eof)?;
        let name = String::from_utf8(name).map_err(|_| corrupt("tensor name is not UTF-8".into()))?;
        let (lname, tname) = name
            .split_once('/')
            .ok_or_else(|| corrupt(format!("tensor name `{name}` lacks a layer prefix")))?;
        let kind = r.read_u8().map_err(eof)?;
        let dtype = r.read_u8().map_err(eof)?;
        if dtype != DTYPE_F64 || kind > KIND_BUFFER {
            return Err(corrupt(format!("tensor `{name}` has unknown kind {kind} or dtype {dtype}")));
        }
        let rank = r.read_u8().map_err(eof)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>().map_err(eof)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut values = Vec::new();
        r.by_ref().take(8 * len as u64).read_to_end(&mut values).map_err(eof)?;
        if values.len() != 8 * len {
            return Err(corrupt("file is truncated".into()));
        }
        let values: Vec<f64> = values
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let tensor = ArrayD::from_shape_vec(IxDyn(&shape), values).map_err(|e| corrupt(e.to_string()))?;
        let depth = *manifest
            .depths
            .get(lname)
            .ok_or_else(|| corrupt(format!("layer `{lname}` missing from manifest")))?;
        let layer = layers
            .entry(lname.to_string())
            .or_insert_with(|| Layer { depth, tensors: BTreeMap::new(), buffers: BTreeMap::new() });
        let slot = if kind == KIND_PARAM { &mut layer.tensors } else { &mut layer.buffers };
        slot.insert(tname.to_string(), tensor);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(corrupt("trailing bytes after tensors".into()));
    }
    let params = ModelParams { dims: manifest.dims.clone(), layers };
    check_against_dims(&params).map_err(|e| corrupt(e.to_string()))?;
    Ok((params, manifest))
}

/// The loaded tensors must match a freshly initialised model of the same
/// dimensions in names and shapes.
fn check_against_dims(params: &ModelParams) -> Result<()> {
    let reference = ModelParams::init(&params.dims, 0)?;
    if reference.layers.len() != params.layers.len() {
        return Err(Error::invalid("layer set does not match the encoder dimensions"));
    }
    for (name, layer) in &reference.layers {
        let got = params.layer(name)?;
        for (a, b) in [(&layer.tensors, &got.tensors), (&layer.buffers, &got.buffers)] {
            if a.len() != b.len() {
                return Err(Error::invalid(format!("layer `{name}` has unexpected tensors")));
            }
            for (tname, t) in a {
                let g = b.get(tname).ok_or_else(|| Error::invalid(format!("missing tensor `{name}/{tname}`")))?;
                if g.shape() != t.shape() {
                    return Err(Error::shape(format!("{name}/{tname} {:?}", t.shape()), format!("{:?}", g.shape())));
                }
            }
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointManifest)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file), path)
}

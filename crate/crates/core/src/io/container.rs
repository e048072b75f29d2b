//! Little-endian epoch container.
//!
//! ```text
//! "MCLP"  u16 version  u32 n_epochs  u16 n_channels  u32 n_samples  f32 fs  u8 flags
//! n_channels x (u16 byte length, UTF-8 name)
//! n_epochs x u32 subject id
//! n_epochs x u8 label                      (only when flags bit 0 is set)
//! n_epochs x n_channels x n_samples x f32  (epoch-major, time-minor)
//! ```
//!
//! Samples and the sampling rate are stored in single precision, so a set is
//! reproduced bit-exactly when its values are representable as `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::signal::EpochSet;

pub const MAGIC: &[u8; 4] = b"MCLP";
pub const VERSION: u16 = 1;
pub const FLAG_LABELS: u8 = 1;

/// Fixed header size in bytes.
pub const HEADER_LEN: u64 = 4 + 2 + 4 + 2 + 4 + 4 + 1;

/// Total encoded size for the given geometry and channel names.
pub fn encoded_len(n_epochs: usize, n_samples: usize, names: &[String], labels: bool) -> u64 {
    let names_len: u64 = names.iter().map(|n| 2 + n.len() as u64).sum();
    let n = n_epochs as u64;
    HEADER_LEN + names_len + 4 * n + if labels { n } else { 0 } + 4 * n * names.len() as u64 * n_samples as u64
}

fn check_geometry(set: &EpochSet) -> Result<()> {
    let (n, c, t) = set.data.dim();
    if n > u32::MAX as usize || c > u16::MAX as usize || t > u32::MAX as usize {
        return Err(Error::invalid(format!("epoch set {n}x{c}x{t} exceeds container limits")));
    }
    if let Some(name) = set.channel_names.iter().find(|n| n.len() > u16::MAX as usize) {
        return Err(Error::invalid(format!("channel name `{name}` is too long")));
    }
    Ok(())
}

pub fn write_container<W: Write>(set: &EpochSet, mut w: W) -> std::io::Result<()> {
    let (n, c, t) = set.data.dim();
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(n as u32)?;
    w.write_u16::<LittleEndian>(c as u16)?;
    w.write_u32::<LittleEndian>(t as u32)?;
    w.write_f32::<LittleEndian>(set.fs as f32)?;
    w.write_u8(if set.labels.is_some() { FLAG_LABELS } else { 0 })?;
    for name in &set.channel_names {
        w.write_u16::<LittleEndian>(name.len() as u16)?;
        w.write_all(name.as_bytes())?;
    }
    for &s in &set.subject_ids {
        w.write_u32::<LittleEndian>(s)?;
    }
    if let Some(labels) = &set.labels {
        w.write_all(labels)?;
    }
    let mut buf = Vec::with_capacity(4 * c * t);
    for epoch in set.data.outer_iter() {
        buf.clear();
        for &v in epoch.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

pub fn save_container(set: &EpochSet, path: &Path) -> Result<()> {
    check_geometry(set)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_container(set, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Decode a container. `total_len`, when known, must match the size implied
/// by the header exactly. `path` is only used in error messages.
pub fn read_container<R: Read>(mut r: R, path: &Path, total_len: Option<u64>) -> Result<EpochSet> {
    let corrupt = |reason: String| Error::corrupt(path, reason);
    let truncated = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::corrupt(path, "file is truncated")
        } else {
            Error::io(path, e)
        }
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(corrupt(format!("bad magic {magic:?}")));
    }
    let version = r.read_u16::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let n = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let c = r.read_u16::<LittleEndian>().map_err(truncated)? as usize;
    let t = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let fs = r.read_f32::<LittleEndian>().map_err(truncated)?;
    let flags = r.read_u8().map_err(truncated)?;
    if flags & !FLAG_LABELS != 0 {
        return Err(corrupt(format!("unknown flag bits {flags:#04x}")));
    }
    let has_labels = flags & FLAG_LABELS != 0;
    if let Some(total) = total_len {
        // Lower bound before the variable-length names are known, so a
        // corrupted header cannot trigger a huge allocation.
        let min = encoded_len(n, t, &vec![String::new(); c], has_labels);
        if min > total {
            return Err(corrupt(format!("header implies at least {min} bytes, file has {total}")));
        }
    }
    let mut names = Vec::with_capacity(c);
    for _ in 0..c {
        let len = r.read_u16::<LittleEndian>().map_err(truncated)? as usize;
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes).map_err(truncated)?;
        names.push(String::from_utf8(bytes).map_err(|_| corrupt("channel name is not UTF-8".into()))?);
    }
    if let Some(total) = total_len {
        let expected = encoded_len(n, t, &names, has_labels);
        if expected != total {
            return Err(corrupt(format!("expected {expected} bytes, file has {total}")));
        }
    }
    let mut subject_ids = vec![0u32; n];
    r.read_u32_into::<LittleEndian>(&mut subject_ids).map_err(truncated)?;
    let labels = if has_labels {
        let mut l = vec![0u8; n];
        r.read_exact(&mut l).map_err(truncated)?;
        Some(l)
    } else {
        None
    };
    let mut data = Array3::<f64>::zeros((n, c, t));
    let mut buf = vec![0f32; c * t];
    for mut epoch in data.outer_iter_mut() {
        r.read_f32_into::<LittleEndian>(&mut buf).map_err(truncated)?;
        epoch.iter_mut().zip(&buf).for_each(|(d, &v)| *d = v as f64);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(corrupt("trailing bytes after data".into()));
    }
    EpochSet::new(data, fs as f64, labels, subject_ids, names).map_err(|e| corrupt(e.to_string()))
}

pub fn load_container(path: &Path) -> Result<EpochSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    read_container(BufReader::new(file), path, Some(len))
}

//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"HSAC"
//! version u32 = 1
//! count   u32
//! count × { name_len u32, name utf-8, rank u32, dims u64 × rank, values f64 × product(dims) }
//! ```

use super::{ParamStore, Tensor};
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"HSAC";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt entry: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
}

pub fn write_checkpoint<W: Write>(mut w: W, store: &ParamStore) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads every entry as `(name, tensor)` in file order.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(&mut r)? as usize);
        }
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        let t = Tensor::new(dims, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, store: &ParamStore) -> Result<(), CheckpointError> {
    let f = std::fs::File::create(path)?;
    let mut w = io::BufWriter::new(f);
    write_checkpoint(&mut w, store)?;
    w.flush()?;
    Ok(())
}

/// Overwrites `store`'s values from a checkpoint; names and shapes must match.
pub fn load_checkpoint(path: &Path, store: &mut ParamStore) -> Result<(), CheckpointError> {
    let f = std::fs::File::open(path)?;
    let entries = read_checkpoint(io::BufReader::new(f))?;
    if entries.len() != store.len() {
        return Err(CheckpointError::Mismatch(format!(
            "{} entries, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, t) in entries {
        let id = store
            .find(&name)
            .ok_or_else(|| CheckpointError::Mismatch(format!("unknown parameter {name}")))?;
        if store.get(id).shape() != t.shape() {
            return Err(CheckpointError::Mismatch(format!("shape of {name}")));
        }
        *store.get_mut(id) = t;
    }
    Ok(())
}

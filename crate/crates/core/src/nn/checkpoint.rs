//! `MNAVCKPT` binary checkpoint format.
//!
//! Layout (all integers little-endian `u32`):
//! magic `b"MNAVCKPT"`, version, tensor count, then per tensor: name length,
//! UTF-8 name bytes, rank, dims, payload as little-endian `f32`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::{NnError, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"MNAVCKPT";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(
    w: &mut W,
    tensors: &[(&str, &Tensor)],
) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for d in t.shape() {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&payload)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: io::Error) -> NnError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        NnError::Format("truncated checkpoint".into())
    } else {
        NnError::Io(e)
    }
}

/// Reads a checkpoint into a fresh store (names in file order).
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<ParamStore, NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(NnError::Format("bad checkpoint magic".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(NnError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = read_u32(r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        if len > 1 << 16 {
            return Err(NnError::Format("tensor name too long".into()));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name)
            .map_err(|_| NnError::Format("tensor name is not UTF-8".into()))?;
        let rank = read_u32(r)? as usize;
        if rank > 8 {
            return Err(NnError::Format(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(truncated)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(name, Tensor::from_vec(&shape, data)?)?;
    }
    Ok(store)
}

pub fn save_store(path: &Path, store: &ParamStore, extra: &[(String, Tensor)]) -> Result<(), NnError> {
    let mut entries: Vec<(&str, &Tensor)> = store.iter().collect();
    entries.extend(extra.iter().map(|(n, t)| (n.as_str(), t)));
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &entries)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_store(path: &Path) -> Result<ParamStore, NnError> {
    let bytes = fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}

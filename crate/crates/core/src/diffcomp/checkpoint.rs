//! Flat binary checkpoints: `"NCGL"`, version `u32`, then per tensor
//! name length `u32`, UTF-8 name, rank `u32`, dims `u64`, values `f64`;
//! all little-endian.

use std::io::{ErrorKind, Read, Write};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NCGL";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(w: &mut W, params: &ParamStore) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, t) in params.iter() {
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

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Format("truncated checkpoint".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<ParamStore> {
    let magic: [u8; 4] = read_exact(r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = u32::from_le_bytes(read_exact(r)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut store = ParamStore::new();
    loop {
        let mut first = [0u8; 4];
        let n = r.read(&mut first)?;
        if n == 0 {
            break;
        }
        if n < 4 {
            r.read_exact(&mut first[n..]).map_err(|_| Error::Format("truncated checkpoint".into()))?;
        }
        let name_len = u32::from_le_bytes(first) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| Error::Format("truncated checkpoint".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = u32::from_le_bytes(read_exact(r)?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_exact(r)?) as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(f64::from_le_bytes(read_exact(r)?));
        }
        store.insert(name, Tensor::new(shape, data)?);
    }
    Ok(store)
}

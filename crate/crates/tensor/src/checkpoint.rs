//! Flat binary parameter checkpoints.
//!
//! Layout: the magic `OCCT`, then one record per parameter until EOF:
//! name length (u32 LE), UTF-8 name, rank (u32 LE), each dim (u64 LE),
//! and the payload as row-major f64 LE.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"OCCT";

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + store.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(TensorError::Checkpoint("truncated record".into()));
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Ok(head)
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    let mut buf = bytes;
    if take(&mut buf, 4)? != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let mut store = ParamStore::new();
    while !buf.is_empty() {
        let name_len = u32::from_le_bytes(take(&mut buf, 4)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut buf, name_len)?)
            .map_err(|e| TensorError::Checkpoint(format!("parameter name: {e}")))?
            .to_string();
        let rank = u32::from_le_bytes(take(&mut buf, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(&mut buf, 8)?.try_into().unwrap()) as usize);
        }
        let count: usize = shape.iter().product();
        let payload = take(&mut buf, count.checked_mul(8).ok_or_else(|| {
            TensorError::Checkpoint("payload size overflow".into())
        })?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if store.find(&name).is_some() {
            return Err(TensorError::Checkpoint(format!("duplicate parameter `{name}`")));
        }
        store.add(name, Tensor::new(shape, data)?);
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(store))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mut store = ParamStore::new();
        store.add("ab", Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap());
        let bytes = encode(&store);
        assert_eq!(&bytes[..4], b"OCCT");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..10], b"ab");
        assert_eq!(&bytes[10..14], &2u32.to_le_bytes());
        assert_eq!(&bytes[14..22], &1u64.to_le_bytes());
        assert_eq!(&bytes[22..30], &2u64.to_le_bytes());
        assert_eq!(&bytes[30..38], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 46);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"NOPE").is_err());
        let mut store = ParamStore::new();
        store.add("w", Tensor::ones(&[4]));
        let bytes = encode(&store);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }
}

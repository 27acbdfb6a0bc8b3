//! Flat binary parameter archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SCDCKPT\0"
//! version    u32      1
//! header_len u64
//! header     JSON     [{"name": .., "dtype": "f64", "shape": [..]}, ..] in name order
//! payload    f64 LE   concatenated tensors in header order
//! checksum   u64      first 8 bytes (LE) of SHA-256 over the payload
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ParamStore;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SCDCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryHeader {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

/// Which buffers an archive carries for each parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contents {
    Weights,
    /// Weights plus `"<name>@momentum"` entries, for resuming training.
    WeightsAndMomentum,
}

const MOMENTUM_SUFFIX: &str = "@momentum";

pub fn encode(store: &ParamStore, contents: Contents) -> Vec<u8> {
    let mut entries: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
    for id in store.canonical_order() {
        let p = store.get(id);
        entries.push((p.name.clone(), p.tensor.shape().to_vec(), p.tensor.data()));
        if contents == Contents::WeightsAndMomentum {
            entries.push((
                format!("{}{MOMENTUM_SUFFIX}", p.name),
                p.tensor.shape().to_vec(),
                &p.momentum_buffer,
            ));
        }
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let header: Vec<EntryHeader> = entries
        .iter()
        .map(|(name, shape, _)| EntryHeader {
            name: name.clone(),
            dtype: "f64".into(),
            shape: shape.clone(),
        })
        .collect();
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut payload = Vec::new();
    for (_, _, data) in &entries {
        for v in data.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(28 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&checksum(&payload).to_le_bytes());
    out
}

pub fn checksum(payload: &[u8]) -> u64 {
    let digest = Sha256::digest(payload);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Parse an archive into `(header, values)` pairs.
pub fn parse(bytes: &[u8]) -> Result<Vec<(EntryHeader, Vec<f64>)>> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 28 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint archive"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let hend = 20usize.checked_add(hlen).ok_or_else(|| bad("header overflow"))?;
    if hend + 8 > bytes.len() {
        return Err(bad("truncated header"));
    }
    let header: Vec<EntryHeader> = serde_json::from_slice(&bytes[20..hend])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let payload = &bytes[hend..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    if checksum(payload) != stored {
        return Err(bad("checksum mismatch"));
    }
    let expected: usize = header.iter().map(|h| h.shape.iter().product::<usize>() * 8).sum();
    if expected != payload.len() {
        return Err(Error::Checkpoint(format!(
            "payload has {} bytes, header describes {expected}",
            payload.len()
        )));
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(header.len());
    for h in header {
        if h.dtype != "f64" {
            return Err(Error::Checkpoint(format!("unsupported dtype {}", h.dtype)));
        }
        let n: usize = h.shape.iter().product();
        let values = payload[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        offset += n * 8;
        out.push((h, values));
    }
    Ok(out)
}

/// Load weights (and momentum, if present) into an already-built store.
/// Every parameter of the store must be present with a matching shape.
pub fn restore(store: &mut ParamStore, bytes: &[u8]) -> Result<()> {
    let entries = parse(bytes)?;
    let mut seen = 0;
    for (h, values) in entries {
        let (name, momentum) = match h.name.strip_suffix(MOMENTUM_SUFFIX) {
            Some(base) => (base, true),
            None => (h.name.as_str(), false),
        };
        let id = store
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        let p = store.get_mut(id);
        if p.tensor.shape() != h.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{name}: archive shape {:?}, model shape {:?}",
                h.shape,
                p.tensor.shape()
            )));
        }
        if momentum {
            p.momentum_buffer = values;
        } else {
            p.tensor.data_mut().copy_from_slice(&values);
            seen += 1;
        }
    }
    if seen != store.len() {
        return Err(Error::Checkpoint(format!(
            "archive holds {seen} of {} parameters",
            store.len()
        )));
    }
    Ok(())
}

pub fn save(store: &ParamStore, contents: Contents, path: &Path) -> Result<()> {
    std::fs::write(path, encode(store, contents)).map_err(|e| Error::io(path, e))
}

pub fn load(store: &mut ParamStore, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    restore(store, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Init;
    use rand::SeedableRng;

    fn store() -> ParamStore {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        s.add("b.weight", &[2, 3], Init::FanIn(3), &mut rng).unwrap();
        s.add("a.bias", &[4], Init::FanIn(1), &mut rng).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let src = store();
        let bytes = encode(&src, Contents::WeightsAndMomentum);
        let mut dst = store();
        for p in dst.iter_mut() {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        restore(&mut dst, &bytes).unwrap();
        for (a, b) in src.iter().zip(dst.iter()) {
            assert_eq!(a.tensor.data(), b.tensor.data());
        }
    }

    #[test]
    fn header_is_in_name_order() {
        let entries = parse(&encode(&store(), Contents::Weights)).unwrap();
        let names: Vec<_> = entries.iter().map(|(h, _)| h.name.as_str()).collect();
        assert_eq!(names, ["a.bias", "b.weight"]);
        assert_eq!(entries[1].0.shape, [2, 3]);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode(&store(), Contents::Weights);
        let n = bytes.len();
        bytes[n - 12] ^= 0x01;
        assert!(matches!(parse(&bytes), Err(Error::Checkpoint(m)) if m.contains("checksum")));
        assert!(parse(b"garbage").is_err());
    }
}

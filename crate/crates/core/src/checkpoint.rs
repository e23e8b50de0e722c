//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!   magic  b"TRAJCKPT"
//!   version u32
//!   entry count u64
//!   per entry: name length u64, UTF-8 name, rank u64, dims u64 each,
//!              values as raw f32
//!
//! Model weights are stored in f32 (the training precision), so an f32
//! round trip is bit-exact. Scalar metadata rides along as `meta.*` entries
//! with shape [1]; the model layer interprets those keys.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::num::Scalar;
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"TRAJCKPT";
const VERSION: u32 = 1;
const META_PREFIX: &str = "meta.";

/// Sanity bound on any length field; rejects corrupt headers before they
/// turn into huge allocations.
const MAX_LEN: u64 = 1 << 32;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn write_entry(w: &mut impl Write, name: &str, shape: &[usize], data_f32: &[f32]) -> Result<()> {
    write_u64(w, name.len() as u64)?;
    w.write_all(name.as_bytes())?;
    write_u64(w, shape.len() as u64)?;
    for &d in shape {
        write_u64(w, d as u64)?;
    }
    for &v in data_f32 {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Saves all parameters plus scalar metadata. Metadata keys are stored as
/// `meta.<key>` entries; parameter names must not use that prefix.
pub fn save<S: Scalar>(
    path: &Path,
    store: &ParamStore<S>,
    meta: &BTreeMap<String, f64>,
) -> Result<()> {
    for name in store.names() {
        if name.starts_with(META_PREFIX) {
            return Err(CoreError::Checkpoint(format!(
                "parameter name `{name}` collides with the metadata prefix"
            )));
        }
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_u64(&mut w, (store.len() + meta.len()) as u64)?;
    // BTreeMap order on both sides keeps the file layout deterministic.
    for (key, &value) in meta {
        let name = format!("{META_PREFIX}{key}");
        write_entry(&mut w, &name, &[1], &[value as f32])?;
    }
    for (name, tensor) in store.iter() {
        let data: Vec<f32> = tensor
            .data()
            .iter()
            .map(|v| v.to_f32().expect("scalar -> f32"))
            .collect();
        write_entry(&mut w, name, tensor.shape(), &data)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint into a parameter store of scalar type `S`, separating
/// out the `meta.*` entries.
pub fn load<S: Scalar>(path: &Path) -> Result<(ParamStore<S>, BTreeMap<String, f64>)> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| CoreError::Checkpoint("file too short for header".to_string()))?;
    if &magic != MAGIC {
        return Err(CoreError::Checkpoint("bad magic bytes".to_string()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let count = read_u64(&mut r)?;
    if count > MAX_LEN {
        return Err(CoreError::Checkpoint(format!("implausible entry count {count}")));
    }

    let mut store = ParamStore::new();
    let mut meta = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u64(&mut r)?;
        if name_len > MAX_LEN {
            return Err(CoreError::Checkpoint(format!("implausible name length {name_len}")));
        }
        let mut name_buf = vec![0u8; name_len as usize];
        r.read_exact(&mut name_buf)
            .map_err(|_| CoreError::Checkpoint("truncated entry name".to_string()))?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| CoreError::Checkpoint("entry name is not UTF-8".to_string()))?;

        let rank = read_u64(&mut r)?;
        if rank > 8 {
            return Err(CoreError::Checkpoint(format!(
                "entry `{name}` has implausible rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut n: u64 = 1;
        for _ in 0..rank {
            let d = read_u64(&mut r)?;
            if d > MAX_LEN {
                return Err(CoreError::Checkpoint(format!(
                    "entry `{name}` has implausible dimension {d}"
                )));
            }
            n = n.saturating_mul(d);
            shape.push(d as usize);
        }
        if n > MAX_LEN {
            return Err(CoreError::Checkpoint(format!(
                "entry `{name}` has implausible element count {n}"
            )));
        }
        let mut data = Vec::with_capacity(n as usize);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(|_| {
                CoreError::Checkpoint(format!("truncated data for entry `{name}`"))
            })?;
            data.push(f32::from_le_bytes(buf));
        }

        if let Some(key) = name.strip_prefix(META_PREFIX) {
            if n != 1 {
                return Err(CoreError::Checkpoint(format!(
                    "metadata entry `{name}` must hold exactly one value"
                )));
            }
            if meta.insert(key.to_string(), data[0] as f64).is_some() {
                return Err(CoreError::Checkpoint(format!("duplicate metadata `{name}`")));
            }
        } else {
            let values: Vec<S> = data
                .into_iter()
                .map(|v| S::from_f32(v).expect("f32 -> scalar"))
                .collect();
            let tensor = Tensor::from_vec(&shape, values)
                .map_err(|e| CoreError::Checkpoint(format!("entry `{name}`: {e}")))?;
            store.insert(&name, tensor).map_err(|_| {
                CoreError::Checkpoint(format!("duplicate parameter `{name}`"))
            })?;
        }
    }

    let mut trailer = [0u8; 1];
    if r.read(&mut trailer)? != 0 {
        return Err(CoreError::Checkpoint("trailing bytes after last entry".to_string()));
    }
    Ok((store, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_store() -> ParamStore<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        store
            .insert(
                "enc.w",
                Tensor::from_vec(&[3, 2], (0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
                    .unwrap(),
            )
            .unwrap();
        store
            .insert(
                "enc.b",
                Tensor::from_vec(&[3], vec![f32::MIN_POSITIVE, -0.0, 1.5e-30]).unwrap(),
            )
            .unwrap();
        store
    }

    #[test]
    fn round_trip_is_bit_exact_including_meta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let store = sample_store();
        let mut meta = BTreeMap::new();
        meta.insert("k".to_string(), 11.0);
        meta.insert("input_scale".to_string(), 15.0);

        save(&path, &store, &meta).unwrap();
        let (loaded, loaded_meta) = load::<f32>(&path).unwrap();

        assert_eq!(loaded.len(), store.len());
        for (name, tensor) in store.iter() {
            let got = loaded.get(name).unwrap();
            assert_eq!(got.shape(), tensor.shape());
            // Bit-exact comparison, not approximate.
            let a: Vec<u32> = tensor.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = got.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert_eq!(loaded_meta, meta);
    }

    #[test]
    fn save_rejects_meta_prefixed_parameter_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut store = ParamStore::<f32>::new();
        store.insert("meta.k", Tensor::zeros(&[1])).unwrap();
        assert!(save(&path, &store, &BTreeMap::new()).is_err());
    }

    #[test]
    fn load_rejects_bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTMAGIC\x01\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(load::<f32>(&path).is_err());

        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&99u32.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = load::<f32>(&path).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn load_rejects_truncated_data() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ckpt");
        let store = sample_store();
        save(&path, &store, &BTreeMap::new()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load::<f32>(&path).is_err());
    }

    #[test]
    fn load_rejects_trailing_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trail.ckpt");
        let store = sample_store();
        save(&path, &store, &BTreeMap::new()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0xAB);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load::<f32>(&path).is_err());
    }
}

//! Versioned named-tensor container.
//!
//! Layout: magic `DRCK`, version u16 (=1), tensor count u32, then per
//! tensor: name length u32, name bytes (utf-8), rank u32, dims (u32 each),
//! and the values as 32-bit little-endian floats.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::layers::ParamList;

const MAGIC: &[u8; 4] = b"DRCK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Result<&CheckpointEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Validation(format!("checkpoint is missing tensor \"{name}\"")))
    }
}

pub fn save_checkpoint(tensors: &ParamList, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(bytes);
        let shape = t.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in &shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data().iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > buf.len() {
            return Err(Error::format(path, "truncated checkpoint"));
        }
        let s = &buf[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    if take(&mut pos, 4)? != MAGIC {
        return Err(Error::format(path, "bad magic, expected DRCK"));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::format(path, "tensor name is not utf-8"))?;
        let rank = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let len: usize = shape.iter().product();
        let raw = take(&mut pos, len * 4)?;
        let data: Vec<f32> =
            raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        entries.push(CheckpointEntry { name, shape, data });
    }
    if pos != buf.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    Ok(Checkpoint { entries })
}

/// Copy checkpoint values into an existing parameter list. Every parameter
/// must be present in the file, shapes must match, and the file must not
/// contain tensors the model does not know.
pub fn load_state_into(params: &ParamList, ck: &Checkpoint) -> Result<()> {
    let known: HashSet<&str> = params.iter().map(|(n, _)| n.as_str()).collect();
    for e in &ck.entries {
        if !known.contains(e.name.as_str()) {
            return Err(Error::Validation(format!("checkpoint has unknown tensor \"{}\"", e.name)));
        }
    }
    for (name, t) in params {
        let e = ck.get(name)?;
        if e.shape != t.shape() {
            return Err(Error::Validation(format!(
                "tensor \"{name}\": checkpoint shape {:?} does not match model {:?}",
                e.shape,
                t.shape()
            )));
        }
        t.update_data(|d| d.copy_from_slice(&e.data));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;
    use rand::SeedableRng;

    fn random_params() -> ParamList {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        vec![
            ("enc.weight".into(), Tensor::randn(&[4, 3, 3, 3], 1.0, &mut rng)),
            ("enc.bias".into(), Tensor::randn(&[4], 1.0, &mut rng)),
            ("head.table".into(), Tensor::randn(&[7, 16], 1.0, &mut rng)),
        ]
    }

    #[test]
    fn roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.drck");
        let params = random_params();
        save_checkpoint(&params, &path).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        for (name, t) in &params {
            let e = ck.get(name).unwrap();
            assert_eq!(e.shape, t.shape());
            let want = t.to_vec();
            assert_eq!(e.data.len(), want.len());
            for (a, b) in e.data.iter().zip(&want) {
                assert_eq!(a.to_bits(), b.to_bits(), "bit mismatch in {name}");
            }
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v2.drck");
        let params = random_params();
        save_checkpoint(&params, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 2;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn missing_tensor_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.drck");
        let mut params = random_params();
        save_checkpoint(&params, &path).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        params.push(("extra.weight".into(), Tensor::zeros(&[2])));
        let err = load_state_into(&params, &ck).unwrap_err();
        assert!(err.to_string().contains("extra.weight"), "{err}");
    }

    #[test]
    fn unknown_tensor_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.drck");
        let params = random_params();
        save_checkpoint(&params, &path).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        let fewer = params[..2].to_vec();
        let err = load_state_into(&fewer, &ck).unwrap_err();
        assert!(err.to_string().contains("head.table"), "{err}");
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.drck");
        save_checkpoint(&random_params(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}

//! Binary checkpoint container.
//!
//! Layout: magic "MAGN", u32 format version, length-prefixed JSON metadata,
//! then named parameter blobs (u32 name length, name bytes, u32 rank, u32
//! extents, little-endian f32 payload) until end of file. All integers are
//! little-endian. Save -> load -> save is byte-identical.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fs;
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"MAGN";
pub const FORMAT_VERSION: u32 = 1;

pub fn save_checkpoint<M: Serialize>(
    path: &Path,
    meta: &M,
    params: &[(String, Tensor<f32>)],
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let meta_json = serde_json::to_vec(meta)?;
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    for (name, tensor) in params {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &e in tensor.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in tensor.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<M: DeserializeOwned>(
    path: &Path,
) -> Result<(M, Vec<(String, Tensor<f32>)>)> {
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} unsupported, this build reads {}",
            path.display(),
            version,
            FORMAT_VERSION
        )));
    }
    let meta_len = r.u32()? as usize;
    let meta_bytes = r.take(meta_len)?;
    let meta: M = serde_json::from_slice(meta_bytes)?;
    let mut params = Vec::new();
    while !r.done() {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{}: blob name not utf-8", path.display())))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = r.take(numel * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok((meta, params))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{}: truncated at byte {}",
                self.path.display(),
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Meta {
        digest: String,
        epoch: u64,
        best_val_mae: f64,
        seed: u64,
    }

    fn sample_params() -> Vec<(String, Tensor<f32>)> {
        vec![
            (
                "conv0.weight".into(),
                Tensor::from_vec(&[2, 1, 3], vec![0.1, -0.2, 0.3, 1e-30, f32::MIN_POSITIVE, 7.5])
                    .unwrap(),
            ),
            ("conv0.bias".into(), Tensor::from_vec(&[2], vec![0.0, -0.0]).unwrap()),
        ]
    }

    #[test]
    fn roundtrip_is_bit_exact_and_restable() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let meta = Meta { digest: "abc".into(), epoch: 7, best_val_mae: 0.125, seed: 42 };
        let params = sample_params();
        save_checkpoint(&p1, &meta, &params).unwrap();
        let (meta2, params2): (Meta, _) = load_checkpoint(&p1).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(params.len(), params2.len());
        for ((n1, t1), (n2, t2)) in params.iter().zip(&params2) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            for (a, b) in t1.as_slice().iter().zip(t2.as_slice()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        save_checkpoint(&p2, &meta2, &params2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn version_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.ckpt");
        let meta = Meta { digest: String::new(), epoch: 0, best_val_mae: 0.0, seed: 0 };
        save_checkpoint(&p, &meta, &sample_params()).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[4] = 99;
        fs::write(&p, bytes).unwrap();
        let err = load_checkpoint::<Meta>(&p).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ckpt");
        let meta = Meta { digest: String::new(), epoch: 0, best_val_mae: 0.0, seed: 0 };
        save_checkpoint(&p, &meta, &sample_params()).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_checkpoint::<Meta>(&p).is_err());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        fs::write(&p, b"NOPE....").unwrap();
        assert!(load_checkpoint::<Meta>(&p).is_err());
    }
}

//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "NIXCKPT\0"
//! version      u32      FORMAT_VERSION
//! kind         u32      1 = detector, 2 = autoencoder
//! config_len   u32
//! config       config_len bytes of UTF-8 JSON (configuration echo)
//! n_tensors    u32
//! per tensor, sorted by name:
//!   name_len   u32
//!   name       name_len bytes of UTF-8
//!   ndim       u32
//!   dims       ndim × u64
//!   data       prod(dims) × f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use tch::{nn::VarStore, Kind, Tensor};

use crate::error::{Error, Result};
use crate::params::sorted_variables;

pub const MAGIC: &[u8; 8] = b"NIXCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Detector = 1,
    Autoencoder = 2,
}

impl CheckpointKind {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            1 => Ok(Self::Detector),
            2 => Ok(Self::Autoencoder),
            other => Err(Error::Checkpoint(format!("unknown kind {other}"))),
        }
    }
}

#[derive(Debug)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    /// Collect the variables of one or more stores, each under a name
    /// prefix (empty for none).
    pub fn from_stores(
        kind: CheckpointKind,
        config: serde_json::Value,
        stores: &[(&str, &VarStore)],
    ) -> Self {
        let mut tensors = Vec::new();
        for (prefix, vs) in stores {
            for (name, t) in sorted_variables(vs) {
                let name = if prefix.is_empty() {
                    name
                } else {
                    format!("{prefix}/{name}")
                };
                tensors.push((name, t));
            }
        }
        tensors.sort_by(|a, b| a.0.cmp(&b.0));
        Self {
            kind,
            config,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind as u32).to_le_bytes());
        let config = serde_json::to_vec(&self.config)?;
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let dims = t.size();
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in &dims {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            let values =
                Vec::<f32>::try_from(t.detach().to_kind(Kind::Float).contiguous().flatten(0, -1))?;
            out.reserve(values.len() * 4);
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let r = &mut bytes;
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let kind = CheckpointKind::from_u32(read_u32(r)?)?;
        let config_len = read_u32(r)? as usize;
        let config: serde_json::Value = serde_json::from_slice(take(r, config_len)?)?;
        let n = read_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = read_u32(r)? as usize;
            let name = String::from_utf8(take(r, name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let ndim = read_u32(r)? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                read_exact(r, &mut b)?;
                dims.push(u64::from_le_bytes(b) as i64);
            }
            let numel: i64 = dims.iter().product();
            let raw = take(r, numel as usize * 4)?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            tensors.push((name, Tensor::from_slice(&values).view(dims.as_slice())));
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Self {
            kind,
            config,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(digest(&bytes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    /// Copy the tensors under `prefix` into `vs`. Every variable of the store
    /// must be present with a matching shape.
    pub fn load_into(&self, prefix: &str, vs: &VarStore) -> Result<()> {
        let lookup = |name: &str| {
            let key = if prefix.is_empty() {
                name.to_string()
            } else {
                format!("{prefix}/{name}")
            };
            self.tensors.iter().find(|(n, _)| *n == key).map(|(_, t)| t)
        };
        tch::no_grad(|| {
            for (name, var) in sorted_variables(vs) {
                let src = lookup(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                if src.size() != var.size() {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name} has shape {:?}, model expects {:?}",
                        src.size(),
                        var.size()
                    )));
                }
                let mut var = var;
                var.copy_(&src.to_kind(var.kind()).to_device(var.device()));
            }
            Ok(())
        })
    }
}

/// Hex SHA-256 of serialized checkpoint bytes.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("truncated file".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

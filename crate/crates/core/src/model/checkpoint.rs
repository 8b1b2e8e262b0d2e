//! Binary checkpoint container.
//!
//! ```text
//! magic      8 bytes  "HMTCKPT\0"
//! version    u32
//! meta       u64 length + JSON {"config": ModelConfig, "vocab": Vocabulary}
//! taxonomy   u32 length + hex SHA-256 fingerprint
//! params     u32 count, then per parameter:
//!            u32 length + name, u32 ndims, ndims × u64 dims, f64 data
//! ```
//!
//! All integers and floats are little-endian. Parameters appear in
//! registration order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HmtModel, ModelConfig};
use crate::autodiff::Tensor;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::taxonomy::Taxonomy;

const MAGIC: &[u8; 8] = b"HMTCKPT\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    vocab: Vocabulary,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::Checkpoint {
            offset: self.pos,
            reason: reason.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!(
                "truncated while reading {what} ({n} bytes needed, {} left)",
                self.bytes.len() - self.pos
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, value: u64, what: &str) -> Result<usize> {
        match usize::try_from(value) {
            Ok(n) if n <= self.bytes.len() - self.pos => Ok(n),
            _ => self.fail(format!("{what} length {value} exceeds the remaining data")),
        }
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let raw = self.u32(what)?;
        let n = self.len(raw as u64, what)?;
        let start = self.pos;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Checkpoint {
            offset: start,
            reason: format!("{what} is not UTF-8"),
        })
    }
}

impl HmtModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&Meta {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
        })
        .expect("meta serialises");
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        let fp = self.taxonomy.fingerprint();
        out.extend_from_slice(&(fp.len() as u32).to_le_bytes());
        out.extend_from_slice(fp.as_bytes());
        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for (_, name, value) in self.store.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
            for &d in value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in value.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Rebuilds a model; `taxonomy` must be the one it was trained on.
    pub fn from_bytes(bytes: &[u8], taxonomy: &Taxonomy) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::Checkpoint {
                offset: 0,
                reason: "not a checkpoint (bad magic bytes)".into(),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return r.fail(format!("unsupported version {version}"));
        }
        let raw = r.u64("meta length")?;
        let meta_len = r.len(raw, "meta")?;
        let meta_start = r.pos;
        let meta: Meta = serde_json::from_slice(r.take(meta_len, "meta")?).map_err(|e| {
            Error::Checkpoint {
                offset: meta_start,
                reason: format!("meta block: {e}"),
            }
        })?;
        let fingerprint = r.string("taxonomy fingerprint")?;
        let expected = taxonomy.fingerprint();
        if fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                checkpoint: fingerprint,
                taxonomy: expected,
            });
        }
        let mut model = HmtModel::new(meta.config, meta.vocab, taxonomy.clone())?;
        let count = r.u32("parameter count")? as usize;
        if count != model.store.len() {
            return r.fail(format!(
                "{count} parameters stored, the configuration defines {}",
                model.store.len()
            ));
        }
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let name = r.string("parameter name")?;
            if name != model.store.name(id) {
                return r.fail(format!(
                    "expected parameter `{}`, found `{name}`",
                    model.store.name(id)
                ));
            }
            let ndims = r.u32("ndims")? as usize;
            let mut shape = Vec::with_capacity(ndims.min(8));
            for _ in 0..ndims {
                let raw = r.u64("dimension")?;
                shape.push(usize::try_from(raw).unwrap_or(usize::MAX));
            }
            if shape != model.store.get(id).shape() {
                return r.fail(format!(
                    "parameter `{name}` has shape {shape:?}, expected {:?}",
                    model.store.get(id).shape()
                ));
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * 8, "parameter data")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            model.store.set(id, Tensor::new(shape, data)?)?;
        }
        if r.pos != bytes.len() {
            return r.fail(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, taxonomy)
    }

    /// Hex SHA-256 of the serialised checkpoint.
    pub fn digest(&self) -> String {
        Sha256::digest(self.to_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

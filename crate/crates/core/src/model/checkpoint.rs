//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes  "GBCKPT01"
//! meta_count       u32
//!   key_len u16, key utf8, value_len u16, value utf8      (meta_count times)
//! tensor_count     u32
//!   name_len u16, name utf8, rows u32, cols u32,
//!   rows*cols f64 values                                   (tensor_count times)
//! ```
//!
//! Metadata keys: `kind`, `gru_variant`, `head`, `components`, `hidden`,
//! `d_in`, `d_out`. Values round-trip bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::cells::{CellKind, GruVariant};
use crate::error::{Error, Result};
use crate::heads::HeadKind;
use crate::params::Parameters;

use super::{ModelShape, SequenceModel};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GBCKPT01";

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u16).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

impl SequenceModel {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let shape = self.shape();
        let components = match shape.head {
            HeadKind::Gmm { components } => components,
            HeadKind::Bernoulli => 0,
        };
        let meta = [
            ("kind", shape.kind.to_string()),
            ("gru_variant", shape.gru_variant.to_string()),
            ("head", shape.head.name().to_string()),
            ("components", components.to_string()),
            ("hidden", shape.hidden.to_string()),
            ("d_in", shape.d_in.to_string()),
            ("d_out", shape.d_out.to_string()),
        ];

        let mut buf = Vec::with_capacity(64 + 8 * self.num_values());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        for (k, v) in &meta {
            put_str(&mut buf, k);
            put_str(&mut buf, v);
        }
        let tensors = self.tensors();
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            put_str(&mut buf, t.name);
            buf.extend_from_slice(&(t.shape.0 as u32).to_le_bytes());
            buf.extend_from_slice(&(t.shape.1 as u32).to_le_bytes());
            for x in t.values {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Data("not a checkpoint (bad magic)".into()));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            meta.insert(k, v);
        }
        let get = |key: &str| {
            meta.get(key)
                .ok_or_else(|| Error::Data(format!("checkpoint metadata lacks {key:?}")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Data(format!("checkpoint metadata {key:?} is not an integer")))
        };
        let head = match get("head")?.as_str() {
            "bernoulli" => HeadKind::Bernoulli,
            "gmm" => HeadKind::Gmm {
                components: num("components")?,
            },
            other => return Err(Error::Data(format!("unknown head {other:?}"))),
        };
        let shape = ModelShape {
            kind: get("kind")?.parse::<CellKind>().map_err(|e| Error::Data(e.to_string()))?,
            head,
            hidden: num("hidden")?,
            d_in: num("d_in")?,
            d_out: num("d_out")?,
            gru_variant: get("gru_variant")?
                .parse::<GruVariant>()
                .map_err(|e| Error::Data(e.to_string()))?,
        };
        let mut model = SequenceModel::zeros(shape);

        let count = r.u32()? as usize;
        let mut loaded = BTreeMap::new();
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                values.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            loaded.insert(name, ((rows, cols), values));
        }
        if r.pos != bytes.len() {
            return Err(Error::Data("trailing bytes after checkpoint tensors".into()));
        }
        let views = model.tensors_mut();
        if views.len() != loaded.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, model expects {}",
                loaded.len(),
                views.len()
            )));
        }
        for t in views {
            let (shape, values) = loaded
                .remove(t.name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks tensor {}", t.name)))?;
            if shape != t.shape {
                return Err(Error::Data(format!(
                    "tensor {} has shape {shape:?}, expected {:?}",
                    t.name, t.shape
                )));
            }
            t.values.copy_from_slice(&values);
        }
        Ok(model)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Data("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Data("checkpoint string is not utf-8".into()))
    }
}

pub fn save_checkpoint(model: &SequenceModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SequenceModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    SequenceModel::from_checkpoint_bytes(&bytes)
}

//! Versioned binary checkpoint container.
//!
//! ```text
//! magic        8 bytes   "FCADCKPT"
//! version      u32 LE
//! config_len   u32 LE
//! config       JSON (model config, rng seed, encoder frozen flag)
//! n_tensors    u32 LE
//! n_tensors × {
//!   name_len u32, name utf-8, requires_grad u8,
//!   rank u32, rank × dim u64, data f64 LE (row-major)
//! }
//! ```
//!
//! Tensors appear in [`ModelBundle::named`] order. All integers and floats
//! are little-endian, so a load/save round trip reproduces every byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelBundle, ModelConfig};

pub const MAGIC: &[u8; 8] = b"FCADCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    rng_seed: u64,
    encoder_frozen: bool,
}

pub fn to_bytes(bundle: &ModelBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let header = Header {
        model: bundle.config,
        rng_seed: bundle.rng_seed,
        encoder_frozen: bundle.encoder.is_frozen(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let named = bundle.named();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(u8::from(t.requires_grad));
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(field, format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ModelBundle> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::format("magic", "not a checkpoint file"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            "version",
            format!("unsupported version {version} (expected {FORMAT_VERSION})"),
        ));
    }
    let len = r.u32("config_len")? as usize;
    let header: Header = serde_json::from_slice(r.take(len, "config")?)
        .map_err(|e| Error::format("config", e.to_string()))?;
    let mut bundle = ModelBundle::zeros(header.model, header.rng_seed)
        .map_err(|e| Error::format("config", e.to_string()))?;
    bundle.encoder.set_frozen(header.encoder_frozen);

    let count = r.u32("n_tensors")? as usize;
    let mut named = bundle.named_mut();
    if count != named.len() {
        return Err(Error::format(
            "n_tensors",
            format!("file holds {count} tensors, config implies {}", named.len()),
        ));
    }
    for (expected, tensor) in named.iter_mut() {
        let field = |what: &str| format!("tensor {expected} {what}");
        let name_len = r.u32(&field("name_len"))? as usize;
        let name = std::str::from_utf8(r.take(name_len, &field("name"))?)
            .map_err(|e| Error::format(field("name"), e.to_string()))?;
        if name != expected {
            return Err(Error::format(field("name"), format!("found {name}")));
        }
        let requires_grad = match r.u8(&field("requires_grad"))? {
            0 => false,
            1 => true,
            other => return Err(Error::format(field("requires_grad"), format!("invalid flag {other}"))),
        };
        let rank = r.u32(&field("rank"))? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64(&field("shape"))? as usize);
        }
        if shape != tensor.shape() {
            return Err(Error::format(
                field("shape"),
                format!("found {shape:?}, config implies {:?}", tensor.shape()),
            ));
        }
        let bytes = r.take(tensor.len() * 8, &field("data"))?;
        for (dst, chunk) in tensor.data_mut().iter_mut().zip(bytes.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        tensor.requires_grad = requires_grad;
    }
    drop(named);
    if r.pos != buf.len() {
        return Err(Error::format("trailer", format!("{} unexpected trailing bytes", buf.len() - r.pos)));
    }
    Ok(bundle)
}

pub fn save_checkpoint(bundle: &ModelBundle, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(bundle)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::Activation;
    use crate::encoder::EncoderConfig;

    fn config() -> ModelConfig {
        ModelConfig {
            regions: 3,
            adapter_hidden: 5,
            activation: Activation::Relu,
            encoder: EncoderConfig {
                depth: 1,
                heads: 2,
                embed: 4,
                use_ffn: true,
                ffn_hidden: 3,
                use_norm: true,
                use_residual: true,
            },
            latent_dim: 2,
        }
    }

    #[test]
    fn round_trip_preserves_bytes_and_flags() {
        let mut b = ModelBundle::new(config(), 11).unwrap();
        b.freeze_encoder();
        let bytes = to_bytes(&b);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, b);
        assert!(back.encoder.is_frozen());
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn truncation_names_the_field() {
        let bytes = to_bytes(&ModelBundle::new(config(), 1).unwrap());
        match from_bytes(&bytes[..bytes.len() - 3]).unwrap_err() {
            Error::Format { context, .. } => assert_eq!(context, "tensor heads.cls_w data"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(from_bytes(&bytes[..4]), Err(Error::Format { .. })));
    }

    #[test]
    fn version_and_magic_are_checked() {
        let mut bytes = to_bytes(&ModelBundle::new(config(), 1).unwrap());
        bytes[8] = 9;
        match from_bytes(&bytes).unwrap_err() {
            Error::Format { context, .. } => assert_eq!(context, "version"),
            other => panic!("unexpected {other:?}"),
        }
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn shape_mismatch_names_the_tensor() {
        let b = ModelBundle::new(config(), 1).unwrap();
        let mut bytes = to_bytes(&b);
        // first tensor: adapter.w1, dims start after name_len(4) + name(10) + flag(1) + rank(4)
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let first_dim = 16 + header_len + 4 + 4 + "adapter.w1".len() + 1 + 4;
        bytes[first_dim] = 7;
        match from_bytes(&bytes).unwrap_err() {
            Error::Format { context, .. } => assert_eq!(context, "tensor adapter.w1 shape"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn save_and_load_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let b = ModelBundle::new(config(), 4).unwrap();
        save_checkpoint(&b, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), b);
        assert!(matches!(
            load_checkpoint(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}

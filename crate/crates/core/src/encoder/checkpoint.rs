//! Checkpoint files.
//!
//! ```text
//! DPRFCKPT1\n
//! key=value\n          hyperparameters and metadata, sorted by key
//! ...
//! \n                   blank line ends the header
//! f64 LE blobs         tensors in `EncoderParams::named_tensors` order
//! crc32 u32 LE         over every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::model::{EncoderConfig, EncoderParams};
use super::EncoderError;

const MAGIC: &[u8] = b"DPRFCKPT1\n";

/// Parameters plus free-form metadata recorded in the header.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub meta: BTreeMap<String, String>,
}

fn fail(msg: impl Into<String>) -> EncoderError {
    EncoderError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(params: EncoderParams) -> Self {
        Self { params, meta: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    fn header(&self) -> BTreeMap<String, String> {
        let c = &self.params.config;
        let mut h = self.meta.clone();
        for (k, v) in [
            ("layers", c.layers),
            ("heads", c.heads),
            ("dim", c.dim),
            ("ff_dim", c.ff_dim),
            ("max_len", c.max_len),
            ("query_budget", c.query_budget),
            ("vocab_size", c.vocab_size),
        ] {
            h.insert(k.into(), v.to_string());
        }
        h.insert("activation".into(), "tanh".into());
        h.insert("norm".into(), "pre_layer_norm".into());
        h.insert("attention_scale".into(), "inv_sqrt_head_dim".into());
        h.insert("dtype".into(), "f64le".into());
        let order: Vec<String> = self.params.named_tensors().into_iter().map(|(n, _)| n).collect();
        h.insert("tensor_order".into(), order.join(","));
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = MAGIC.to_vec();
        for (k, v) in self.header() {
            buf.extend_from_slice(format!("{k}={v}\n").as_bytes());
        }
        buf.push(b'\n');
        for (_, t) in self.params.named_tensors() {
            for v in t {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EncoderError> {
        if bytes.len() < MAGIC.len() + 5 || !bytes.starts_with(MAGIC) {
            return Err(fail("bad magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(fail("checksum mismatch"));
        }
        let rest = &body[MAGIC.len()..];
        let end = rest
            .windows(2)
            .position(|w| w == b"\n\n")
            .map(|p| p + 1)
            .or_else(|| rest.first().filter(|&&b| b == b'\n').map(|_| 0))
            .ok_or_else(|| fail("unterminated header"))?;
        let header = std::str::from_utf8(&rest[..end]).map_err(|_| fail("header is not utf-8"))?;
        let mut meta = BTreeMap::new();
        for line in header.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| fail(format!("bad header line `{line}`")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<usize, EncoderError> {
            meta.get(k)
                .ok_or_else(|| fail(format!("missing `{k}`")))?
                .parse()
                .map_err(|_| fail(format!("bad `{k}`")))
        };
        let config = EncoderConfig {
            layers: get("layers")?,
            heads: get("heads")?,
            dim: get("dim")?,
            ff_dim: get("ff_dim")?,
            max_len: get("max_len")?,
            query_budget: get("query_budget")?,
            vocab_size: get("vocab_size")?,
        };
        if let Some(e) = config.validate().into_iter().next() {
            return Err(fail(e));
        }
        let mut params = EncoderParams::zeros(config);
        let blob = &rest[end + 1..];
        let expected = params.num_params() * 8;
        if blob.len() != expected {
            return Err(fail(format!("expected {expected} weight bytes, found {}", blob.len())));
        }
        let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v = values.next().unwrap();
            }
        }
        for k in [
            "layers",
            "heads",
            "dim",
            "ff_dim",
            "max_len",
            "query_budget",
            "vocab_size",
            "activation",
            "norm",
            "attention_scale",
            "dtype",
            "tensor_order",
        ] {
            meta.remove(k);
        }
        Ok(Self { params, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncoderError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncoderError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

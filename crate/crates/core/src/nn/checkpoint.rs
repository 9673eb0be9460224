//! Checkpoint container: a TOML metadata header (kind, seed, architecture
//! hyperparameters, parameter names/shapes) followed by the raw f64
//! little-endian parameter data in declaration order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ParamEntry, ParamSet};
use crate::{Error, Result};

const CKPT_MAGIC: &[u8; 4] = b"FCKP";
const CKPT_VERSION: u16 = 1;
pub const CKPT_FORMAT: &str = "fusebench-checkpoint-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    kind: String,
    seed: u64,
    meta: toml::Table,
    params: Vec<ParamHeader>,
}

/// A serialized parameter map plus its metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Network family, e.g. "scorer" or "denoiser".
    pub kind: String,
    /// Training/initialization seed echo.
    pub seed: u64,
    /// Kind-specific metadata (architecture config, noise level, ...).
    pub meta: toml::Table,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, seed: u64, params: ParamSet) -> Checkpoint {
        Checkpoint {
            kind: kind.into(),
            seed,
            meta: toml::Table::new(),
            params,
        }
    }

    /// Inserts a serializable value into the metadata table.
    pub fn with_meta<T: Serialize>(mut self, key: &str, value: &T) -> Result<Checkpoint> {
        let v = toml::Value::try_from(value)
            .map_err(|e| Error::InvalidArgument(format!("checkpoint meta `{key}`: {e}")))?;
        self.meta.insert(key.to_string(), v);
        Ok(self)
    }

    /// Reads a typed value back out of the metadata table.
    pub fn meta_get<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint meta missing `{key}`")))?;
        v.clone()
            .try_into()
            .map_err(|e| Error::InvalidArgument(format!("checkpoint meta `{key}`: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let header = Header {
            format: CKPT_FORMAT.to_string(),
            kind: self.kind.clone(),
            seed: self.seed,
            meta: self.meta.clone(),
            params: self
                .params
                .entries
                .iter()
                .map(|e| ParamHeader {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                })
                .collect(),
        };
        let header_text = toml::to_string(&header)
            .map_err(|e| Error::InvalidArgument(format!("checkpoint header: {e}")))?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let w = |out: &mut BufWriter<File>, bytes: &[u8]| -> Result<()> {
            out.write_all(bytes).map_err(|e| Error::io(path, e))
        };
        w(&mut out, CKPT_MAGIC)?;
        w(&mut out, &CKPT_VERSION.to_le_bytes())?;
        w(&mut out, &(header_text.len() as u32).to_le_bytes())?;
        w(&mut out, header_text.as_bytes())?;
        for e in &self.params.entries {
            for v in &e.data {
                w(&mut out, &v.to_le_bytes())?;
            }
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rd = BufReader::new(file);

        let mut magic = [0u8; 4];
        rd.read_exact(&mut magic)
            .map_err(|_| Error::format(path, "truncated checkpoint"))?;
        if &magic != CKPT_MAGIC {
            return Err(Error::format(path, "bad magic (not a checkpoint)"));
        }
        let mut u16b = [0u8; 2];
        rd.read_exact(&mut u16b)
            .map_err(|_| Error::format(path, "truncated checkpoint"))?;
        if u16::from_le_bytes(u16b) != CKPT_VERSION {
            return Err(Error::format(path, "unsupported checkpoint version"));
        }
        let mut u32b = [0u8; 4];
        rd.read_exact(&mut u32b)
            .map_err(|_| Error::format(path, "truncated checkpoint"))?;
        let header_len = u32::from_le_bytes(u32b) as usize;
        let mut header_bytes = vec![0u8; header_len];
        rd.read_exact(&mut header_bytes)
            .map_err(|_| Error::format(path, "truncated header"))?;
        let header: Header = toml::from_str(
            std::str::from_utf8(&header_bytes)
                .map_err(|_| Error::format(path, "header is not UTF-8"))?,
        )
        .map_err(|e| Error::format(path, e.to_string()))?;
        if header.format != CKPT_FORMAT {
            return Err(Error::format(path, format!("unknown format `{}`", header.format)));
        }

        let mut params = ParamSet::default();
        for ph in &header.params {
            let count: usize = ph.shape.iter().product();
            let mut bytes = vec![0u8; count * 8];
            rd.read_exact(&mut bytes)
                .map_err(|_| Error::format(path, format!("truncated data for `{}`", ph.name)))?;
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.entries.push(ParamEntry {
                name: ph.name.clone(),
                shape: ph.shape.clone(),
                data,
            });
        }
        Ok(Checkpoint {
            kind: header.kind,
            seed: header.seed,
            meta: header.meta,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut params = ParamSet::default();
        params.push("a.weight", vec![2, 1, 3, 3], (0..18).map(|i| i as f64 * 0.1).collect());
        params.push("a.bias", vec![2], vec![0.5, -0.5]);
        let ckpt = Checkpoint::new("denoiser", 17, params.clone())
            .with_meta("noise_level", &25.0)
            .unwrap();
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.kind, "denoiser");
        assert_eq!(back.seed, 17);
        assert_eq!(back.params, params);
        let nl: f64 = back.meta_get("noise_level").unwrap();
        assert_eq!(nl, 25.0);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}

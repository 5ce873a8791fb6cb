//! Binary tensor container: `VFCK` magic, u32 version, u64 header length, a
//! JSON header describing every tensor, then the little-endian f32 payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::weights::Weights;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

const MAGIC: &[u8; 4] = b"VFCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    nbytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
    crc32: u32,
}

/// Named f32 tensors plus free-form JSON metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let offset = payload.len() as u64;
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset,
                nbytes: payload.len() as u64 - offset,
            });
        }
        let header = Header {
            config: self.config.clone(),
            tensors: entries,
            crc32: crc32fast::hash(&payload),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let hend = 16u64
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| Error::Format("truncated header".into()))? as usize;
        let header: Header = serde_json::from_slice(&bytes[16..hend])
            .map_err(|e| Error::Format(format!("header: {e}")))?;
        let payload = &bytes[hend..];

        let mut expected_end = 0u64;
        for e in &header.tensors {
            if e.dtype != "f32" {
                return Err(Error::Format(format!(
                    "{}: unsupported dtype {}",
                    e.name, e.dtype
                )));
            }
            let numel: usize = e.shape.iter().product();
            if e.nbytes != 4 * numel as u64 {
                return Err(Error::Format(format!(
                    "{}: {} bytes declared for {numel} elements",
                    e.name, e.nbytes
                )));
            }
            if e.offset != expected_end {
                return Err(Error::Format(format!("{}: non-contiguous offset", e.name)));
            }
            expected_end += e.nbytes;
        }
        if expected_end != payload.len() as u64 {
            return Err(Error::Format(format!(
                "payload holds {} bytes, header declares {expected_end}",
                payload.len()
            )));
        }
        let actual = crc32fast::hash(payload);
        if actual != header.crc32 {
            return Err(Error::Checksum {
                expected: header.crc32,
                actual,
            });
        }

        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let raw = &payload[e.offset as usize..(e.offset + e.nbytes) as usize];
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((e.name, Tensor::new(e.shape, data)?));
        }
        Ok(Self {
            config: header.config,
            tensors,
        })
    }
}

pub fn write_container(path: impl AsRef<Path>, container: &Container) -> Result<()> {
    std::fs::write(path, container.to_bytes()?)?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    Container::from_bytes(&std::fs::read(path)?)
}

impl<F: Real> Weights<F> {
    pub fn to_container(&self) -> Result<Container> {
        Ok(Container {
            config: serde_json::to_value(&self.config)?,
            tensors: self
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (n, t.cast()))
                .collect(),
        })
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(c.config)
            .map_err(|e| Error::Format(format!("model config: {e}")))?;
        let named = c.tensors.into_iter().map(|(n, t)| (n, t.cast())).collect();
        Weights::from_named(config, named)
    }
}

/// Stores weights as f32 regardless of the in-memory precision.
pub fn save_checkpoint<F: Real>(weights: &Weights<F>, path: impl AsRef<Path>) -> Result<()> {
    write_container(path, &weights.to_container()?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Weights<f32>> {
    Weights::from_container(read_container(path)?)
}

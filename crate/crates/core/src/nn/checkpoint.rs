//! Binary checkpoint format (little-endian):
//!
//! ```text
//! magic "SEIV3\0" | u16 version | u32 entry count
//! per entry: u16 name length | UTF-8 name | u8 dtype | u8 rank | u32 extents… | raw values
//! u32 metadata length | UTF-8 JSON metadata
//! ```

use std::fs;
use std::path::Path;

use super::network::Network;
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"SEIV3\0";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Values {
    fn dtype(&self) -> DType {
        match self {
            Values::F32(_) => DType::F32,
            Values::F64(_) => DType::F64,
        }
    }

    fn to_tensor<T: Scalar>(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let data: Vec<T> = match (self, T::DTYPE) {
            // Same-width copies go through the bit pattern so round trips are exact.
            (Values::F32(v), DType::F32) => v.iter().map(|x| T::read_le(&x.to_le_bytes())).collect(),
            (Values::F64(v), DType::F64) => v.iter().map(|x| T::read_le(&x.to_le_bytes())).collect(),
            (Values::F32(v), _) => v.iter().map(|&x| T::from_f64_lossy(x as f64)).collect(),
            (Values::F64(v), _) => v.iter().map(|&x| T::from_f64_lossy(x)).collect(),
        };
        Tensor::new(shape.to_vec(), data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Values,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u16,
    pub entries: Vec<CheckpointEntry>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn from_network<T: Scalar>(net: &Network<T>, metadata: serde_json::Value) -> Self {
        let entries = net
            .params()
            .into_iter()
            .map(|p| {
                let values = match T::DTYPE {
                    DType::F32 => Values::F32(p.value.data().iter().map(|v| v.to_f64_lossy() as f32).collect()),
                    DType::F64 => Values::F64(p.value.data().iter().map(|v| v.to_f64_lossy()).collect()),
                };
                CheckpointEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values,
                }
            })
            .collect();
        Self {
            version: FORMAT_VERSION,
            entries,
            metadata,
        }
    }

    /// Copies every stored tensor into the matching parameter of `net`.
    pub fn apply_to<T: Scalar>(&self, net: &mut Network<T>) -> Result<()> {
        let expected = net.params().len();
        if expected != self.entries.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint holds {} tensors, model has {expected}",
                self.entries.len()
            )));
        }
        let mut entries = self.entries.iter();
        let mut err = None;
        net.visit_params_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            let Some(e) = entries.next() else { return };
            if e.name != p.name || e.shape != p.value.shape() {
                err = Some(Error::InvalidArgument(format!(
                    "checkpoint entry `{}` {:?} does not match parameter `{}` {:?}",
                    e.name,
                    e.shape,
                    p.name,
                    p.value.shape()
                )));
                return;
            }
            match e.values.to_tensor(&e.shape) {
                Ok(t) => p.value = t,
                Err(x) => err = Some(x),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidArgument(format!("parameter name too long: {}", e.name)))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(e.values.dtype().tag());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &e.values {
                Values::F32(v) => v.iter().for_each(|x| x.write_le(&mut out)),
                Values::F64(v) => v.iter().for_each(|x| x.write_le(&mut out)),
            }
        }
        let meta = serde_json::to_vec(&self.metadata)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len(), "magic")?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: "bad magic; not a checkpoint file".into(),
            });
        }
        let version_at = r.pos;
        let version = r.u16("format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format {
                offset: version_at as u64,
                reason: format!("unsupported format version {version} (expected {FORMAT_VERSION})"),
            });
        }
        let count = r.u32("entry count")? as usize;
        let mut entries = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::Format {
                    offset: name_at as u64,
                    reason: "parameter name is not UTF-8".into(),
                })?
                .to_string();
            let tag_at = r.pos;
            let tag = r.u8("dtype")?;
            let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format {
                offset: tag_at as u64,
                reason: format!("unknown dtype tag {tag}"),
            })?;
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("extent")? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * dtype.size_of(), "tensor values")?;
            let values = match dtype {
                DType::F32 => Values::F32(raw.chunks_exact(4).map(f32::read_le).collect()),
                DType::F64 => Values::F64(raw.chunks_exact(8).map(f64::read_le).collect()),
            };
            entries.push(CheckpointEntry { name, shape, values });
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta_at = r.pos;
        let meta = r.take(meta_len, "metadata")?;
        let metadata = serde_json::from_slice(meta).map_err(|e| Error::Format {
            offset: meta_at as u64,
            reason: format!("metadata is not valid JSON: {e}"),
        })?;
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                reason: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Self {
            version,
            entries,
            metadata,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                reason: format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn save_checkpoint<T: Scalar>(net: &Network<T>, metadata: serde_json::Value, path: &Path) -> Result<()> {
    let bytes = Checkpoint::from_network(net, metadata).encode()?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&fs::read(path)?)
}

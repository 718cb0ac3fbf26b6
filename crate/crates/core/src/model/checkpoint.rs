//! Flat named-tensor checkpoints, their binary file format, and souping.
//!
//! File layout (little-endian): magic `OLM2`, `u32` version, `u32` entry
//! count, then per entry a `u16` name length, the UTF-8 name, a `u8` rank,
//! `u32` dims and the `f32` payload. The model config lives in a JSON
//! sidecar next to the file (`<path>.json`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ParamLayout};
use crate::{ForgeError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OLM2";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor payload does not match shape"
        );
        Tensor { shape, data }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: IndexMap<String, Tensor>,
    pub meta: ModelConfig,
}

impl Checkpoint {
    /// Names and shapes must match the layout implied by `meta`, and every
    /// value must be finite.
    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        let layout = ParamLayout::new(&self.meta);
        let mut offending = Vec::new();
        for spec in layout.specs() {
            match self.params.get(&spec.name) {
                Some(t) if t.shape == spec.shape => {}
                _ => offending.push(spec.name.clone()),
            }
        }
        for name in self.params.keys() {
            if layout.index_of(name).is_none() {
                offending.push(name.clone());
            }
        }
        if !offending.is_empty() {
            return Err(ForgeError::StructureMismatch { names: offending });
        }
        for (name, t) in &self.params {
            if !t.data.iter().all(|x| x.is_finite()) {
                return Err(ForgeError::Numeric(format!(
                    "parameter '{name}' has non-finite values"
                )));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(|t| t.data.len()).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(12 + 4 * self.num_params());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let count = u32::try_from(self.params.len())
            .map_err(|_| ForgeError::Format("too many entries".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.params {
            let len = u16::try_from(name.len())
                .map_err(|_| ForgeError::Format(format!("parameter name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let ndim = u8::try_from(t.shape.len())
                .map_err(|_| ForgeError::Format(format!("rank too large: {name}")))?;
            out.push(ndim);
            for &d in &t.shape {
                let d = u32::try_from(d)
                    .map_err(|_| ForgeError::Format(format!("dimension too large: {name}")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Decode the binary payload; `meta` comes from the sidecar.
    pub fn from_bytes(bytes: &[u8], meta: ModelConfig) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(ForgeError::Format("bad magic, not a checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ForgeError::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let count = r.u32()? as usize;
        let mut params = IndexMap::with_capacity(count);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| ForgeError::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let ndim = r.take(1)?[0] as usize;
            let shape = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let bytes_len = numel
                .checked_mul(4)
                .ok_or_else(|| ForgeError::Format(format!("parameter '{name}' is too large")))?;
            let payload = r.take(bytes_len)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if params
                .insert(name.clone(), Tensor { shape, data })
                .is_some()
            {
                return Err(ForgeError::Format(format!("duplicate parameter '{name}'")));
            }
        }
        if r.pos != bytes.len() {
            return Err(ForgeError::Format("trailing bytes after last entry".into()));
        }
        Ok(Checkpoint { params, meta })
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ForgeError::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&ckpt.to_bytes()?)?;
    w.flush()?;
    let sidecar = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(sidecar, &ckpt.meta)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let meta: ModelConfig =
        serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let ckpt = Checkpoint::from_bytes(&bytes, meta)?;
    ckpt.validate()?;
    Ok(ckpt)
}

/// Element-wise mean of checkpoints sharing names, shapes and config.
pub fn soup(checkpoints: &[Checkpoint]) -> Result<Checkpoint> {
    let Some(first) = checkpoints.first() else {
        return Err(ForgeError::validation("soup needs at least one checkpoint"));
    };
    let mut offending: Vec<String> = Vec::new();
    for c in &checkpoints[1..] {
        if c.meta != first.meta {
            offending.push("<config>".into());
        }
        for (name, t) in &first.params {
            match c.params.get(name) {
                Some(o) if o.shape == t.shape => {}
                _ => offending.push(name.clone()),
            }
        }
        offending.extend(
            c.params
                .keys()
                .filter(|n| !first.params.contains_key(*n))
                .cloned(),
        );
    }
    if !offending.is_empty() {
        offending.sort();
        offending.dedup();
        return Err(ForgeError::StructureMismatch { names: offending });
    }

    // Each element is summed in sorted order, so argument order never
    // changes a bit of the result.
    let k = checkpoints.len() as f64;
    let mut params = IndexMap::with_capacity(first.params.len());
    let mut column = Vec::with_capacity(checkpoints.len());
    for (name, t) in &first.params {
        let sources: Vec<&[f32]> = checkpoints
            .iter()
            .map(|c| c.params[name].data.as_slice())
            .collect();
        let data = (0..t.data.len())
            .map(|i| {
                column.clear();
                column.extend(sources.iter().map(|s| s[i]));
                column.sort_unstable_by(f32::total_cmp);
                (column.iter().map(|&x| x as f64).sum::<f64>() / k) as f32
            })
            .collect();
        params.insert(name.clone(), Tensor::new(t.shape.clone(), data));
    }
    Ok(Checkpoint {
        params,
        meta: first.meta.clone(),
    })
}

//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SHAL" | u32 version | u64 config_hash | u64 seed | u64 step
//! u32 len | extra (JSON, len bytes)
//! u32 n_arrays
//! per array: u32 len | name | u32 ndim | u64 dims[ndim] | f32 data[prod(dims)]
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::nn::Module;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SHAL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedArray {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: t.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub seed: u64,
    pub step: u64,
    /// Free-form metadata; serialized as JSON.
    pub extra: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(config_hash: u64, seed: u64, step: u64) -> Self {
        Self {
            config_hash,
            seed,
            step,
            extra: serde_json::Value::Null,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, array: NamedArray) {
        self.arrays.push(array);
    }

    /// Appends every parameter and buffer of `model` under `prefix`.
    pub fn push_module(&mut self, prefix: &str, model: &dyn Module) {
        for (name, t) in model.named_params(prefix).into_iter().chain(model.named_buffers(prefix)) {
            self.arrays.push(NamedArray::from_tensor(name, &t));
        }
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let dotted = format!("{prefix}.");
        self.arrays.iter().any(|a| a.name.starts_with(&dotted))
    }

    /// Copies stored values into the parameters and buffers of `model`
    /// under `prefix`.
    pub fn load_module(&self, prefix: &str, model: &dyn Module) -> Result<()> {
        for (name, t) in model.named_params(prefix).into_iter().chain(model.named_buffers(prefix)) {
            let a = self
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing array '{name}'")))?;
            if a.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "array '{name}' has shape {:?}, model expects {:?}",
                    a.shape,
                    t.shape()
                )));
            }
            t.set_data(&a.data)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let extra = serde_json::to_vec(&self.extra)?;
        let payload: usize = self.arrays.iter().map(|a| a.data.len() * 4 + a.name.len() + 8 * a.shape.len() + 8).sum();
        let mut out = Vec::with_capacity(40 + extra.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        put_len(&mut out, extra.len())?;
        out.extend_from_slice(&extra);
        put_len(&mut out, self.arrays.len())?;
        for a in &self.arrays {
            if a.shape.iter().product::<usize>() != a.data.len() {
                return Err(Error::Checkpoint(format!(
                    "array '{}' has {} values for shape {:?}",
                    a.name,
                    a.data.len(),
                    a.shape
                )));
            }
            put_len(&mut out, a.name.len())?;
            out.extend_from_slice(a.name.as_bytes());
            put_len(&mut out, a.shape.len())?;
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4, "header").ok() != Some(MAGIC.as_slice()) {
            return Err(Error::BadMagic);
        }
        let version = r.u32("header")?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let config_hash = r.u64("header")?;
        let seed = r.u64("header")?;
        let step = r.u64("header")?;
        let n = r.u32("metadata")? as usize;
        let extra = serde_json::from_slice(r.take(n, "metadata")?)?;
        let count = r.u32("array table")? as usize;
        let mut arrays = Vec::with_capacity(count.min(4096));
        for i in 0..count {
            let n = r.u32(&format!("array #{i} name"))? as usize;
            let name = String::from_utf8(r.take(n, &format!("array #{i} name"))?.to_vec())
                .map_err(|_| Error::Checkpoint(format!("array #{i} name is not UTF-8")))?;
            let ndim = r.u32(&format!("array '{name}'"))? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(r.u64(&format!("array '{name}'"))? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Checkpoint(format!("array '{name}' shape {shape:?} overflows")))?;
            let raw = r.take(len, &format!("array '{name}'"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            arrays.push(NamedArray { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config_hash,
            seed,
            step,
            extra,
            arrays,
        })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).at(dir)?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp).at(&tmp)?;
            f.write_all(&bytes).at(&tmp)?;
            f.sync_all().at(&tmp)?;
        }
        fs::rename(&tmp, path).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).at(path)?)
    }
}

/// First eight bytes of the SHA-256 of `bytes`.
pub fn config_hash(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} exceeds u32")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Truncated(what.to_owned()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

//! Model checkpoints (`PFM1`).
//!
//! Little-endian layout:
//!
//! ```text
//! magic "PFM1" | version u32 = 1 | config length u64 | config JSON bytes
//! tensor count u32
//! per tensor: name length u32 | name UTF-8 | ndim u32 | ndim × u64 dims | f64 values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AnyModel, ModelSpec, Trainable};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PFM1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(model: &AnyModel) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&model.spec()).map_err(|e| Error::Format(format!("config: {e}")))?;
    let tensors = model.named_tensors();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(config.len() as u64).to_le_bytes());
    buf.extend_from_slice(&config);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for d in t.shape() {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Format(format!("truncated checkpoint while reading {what}")));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn len64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Format(format!("{what} overflows usize")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<AnyModel> {
    let mut r = Reader { bytes };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic, expected \"PFM1\"".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let clen = r.len64("config length")?;
    let spec: ModelSpec = serde_json::from_slice(r.take(clen, "config")?)
        .map_err(|e| Error::Format(format!("config: {e}")))?;
    let mut model = spec.build()?;
    let expected: Vec<(String, Vec<usize>)> = model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let count = r.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(Error::Format(format!("{count} tensors, config implies {}", expected.len())));
    }
    let mut loaded = Vec::with_capacity(count);
    for (want_name, want_shape) in &expected {
        let nlen = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(nlen, "name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        if name != want_name {
            return Err(Error::Format(format!("tensor {name:?} where {want_name:?} was expected")));
        }
        let ndim = r.u32("ndim")? as usize;
        if ndim != want_shape.len() {
            return Err(Error::Format(format!("{name}: {ndim} axes, expected {}", want_shape.len())));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.len64("dimension")?);
        }
        if &shape != want_shape {
            return Err(Error::Format(format!("{name}: shape {shape:?}, expected {want_shape:?}")));
        }
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 8, name)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        loaded.push(Tensor::new(&shape, data)?);
    }
    if !r.bytes.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", r.bytes.len())));
    }
    for (dst, src) in model.tensors_mut().into_iter().zip(loaded) {
        *dst = src;
    }
    Ok(model)
}

pub fn write_checkpoint(model: &AnyModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_checkpoint(model)?)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<AnyModel> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

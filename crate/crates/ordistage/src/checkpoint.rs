//! Binary checkpoint format shared by every model in the pipeline.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "OSTG"
//! version u32      currently 1
//! count   u32      number of parameters
//! per parameter, in lexicographic name order:
//!   name_len u16, name UTF-8 bytes,
//!   rank u8, dims u32 x rank,
//!   values f64 x prod(dims), little-endian bit patterns
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"OSTG";
const VERSION: u32 = 1;

/// Serialize named tensors. Names are sorted lexicographically so identical
/// parameter sets produce identical bytes.
pub fn save<P: AsRef<Path>>(path: P, params: &[(String, Tensor)]) -> Result<()> {
    let mut sorted: Vec<&(String, Tensor)> = params.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for pair in sorted.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::Contract(format!(
                "duplicate parameter name '{}' in checkpoint",
                pair[0].0
            )));
        }
    }
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(sorted.len() as u32).to_le_bytes());
    for (name, tensor) in sorted {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Contract(format!("parameter name too long: {name}")));
        }
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        let shape = tensor.shape();
        buf.push(shape.len() as u8);
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data().iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read a checkpoint back as name -> tensor.
pub fn load<P: AsRef<Path>>(path: P) -> Result<BTreeMap<String, Tensor>> {
    let mut bytes = Vec::new();
    std::fs::File::open(&path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Data("checkpoint truncated".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != MAGIC {
        return Err(Error::Data("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::Data("checkpoint name is not UTF-8".into()))?;
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut pos, numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.insert(name, Tensor::from_vec(data, &shape)?);
    }
    if pos != bytes.len() {
        return Err(Error::Data("trailing bytes after checkpoint payload".into()));
    }
    Ok(out)
}

/// Copy checkpoint values into existing parameters, matching by name and
/// shape. Every parameter must be present.
pub fn load_into<P: AsRef<Path>>(path: P, params: &[(String, Tensor)]) -> Result<()> {
    let stored = load(path)?;
    for (name, tensor) in params {
        let src = stored
            .get(name)
            .ok_or_else(|| Error::Data(format!("checkpoint missing parameter '{name}'")))?;
        if src.shape() != tensor.shape() {
            return Err(Error::Data(format!(
                "checkpoint parameter '{name}' has shape {:?}, model expects {:?}",
                src.shape(),
                tensor.shape()
            )));
        }
        tensor.data_mut().copy_from_slice(&src.data());
    }
    Ok(())
}

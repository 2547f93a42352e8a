//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "XAIW" 0x00             magic, 5 bytes
//! u32 version             = 1
//! u32 tensor count
//! per tensor:
//!   u16 name length, UTF-8 name
//!   u8 rank, rank × u32 dims
//!   product(dims) × f64   row-major IEEE-754
//! ```

use std::fs;
use std::path::Path;

use super::toycnn::{ArchConfig, ToyConvNet};
use crate::error::{Result, XaiError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"XAIW\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_weights(model: &ToyConvNet) -> Vec<u8> {
    let params = model.named_parameters();
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_weights(model: &ToyConvNet, path: &Path) -> Result<()> {
    fs::write(path, encode_weights(model)).map_err(|e| XaiError::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<ToyConvNet> {
    let bytes = fs::read(path).map_err(|e| XaiError::io(path, e))?;
    decode_weights(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(XaiError::Format {
                offset: self.pos,
                detail: format!("truncated while reading {what}"),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<ToyConvNet> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(5, "magic")? != MAGIC {
        return Err(XaiError::Format {
            offset: 0,
            detail: "bad magic, expected \"XAIW\\0\"".into(),
        });
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(XaiError::Format {
            offset: 5,
            detail: format!("unsupported version {version}"),
        });
    }
    let count = cur.u32("tensor count")? as usize;
    let mut tensors: Vec<(String, Tensor)> = Vec::with_capacity(count.min(64));
    for i in 0..count {
        let len = u16::from_le_bytes(
            cur.take(2, &format!("name length of tensor {i}"))?
                .try_into()
                .unwrap(),
        );
        let start = cur.pos;
        let name = std::str::from_utf8(cur.take(len as usize, &format!("name of tensor {i}"))?)
            .map_err(|_| XaiError::Format {
                offset: start,
                detail: format!("tensor {i} name is not UTF-8"),
            })?
            .to_owned();
        let rank = cur.take(1, &format!("rank of tensor '{name}'"))?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32(&format!("dims of tensor '{name}'"))? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 8, &format!("values of tensor '{name}'"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| XaiError::Format {
            offset: start,
            detail: format!("tensor '{name}': {e}"),
        })?;
        tensors.push((name, t));
    }
    if cur.pos != bytes.len() {
        return Err(XaiError::Format {
            offset: cur.pos,
            detail: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    assemble(tensors, cur.pos)
}

fn assemble(mut tensors: Vec<(String, Tensor)>, offset: usize) -> Result<ToyConvNet> {
    let mut take = |name: &str| -> Result<Tensor> {
        let i = tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| XaiError::Format {
                offset,
                detail: format!("missing tensor '{name}'"),
            })?;
        Ok(tensors.swap_remove(i).1)
    };
    let fmt = |detail: String| XaiError::Format { offset, detail };
    let w = [
        take("conv1.weight")?,
        take("conv2.weight")?,
        take("fc1.weight")?,
        take("fc2.weight")?,
    ];
    let b = [
        take("conv1.bias")?,
        take("conv2.bias")?,
        take("fc1.bias")?,
        take("fc2.bias")?,
    ];
    let dims = |t: &Tensor, rank: usize, name: &str| -> Result<Vec<usize>> {
        if t.rank() == rank {
            Ok(t.shape().to_vec())
        } else {
            Err(fmt(format!(
                "tensor '{name}' has rank {}, expected {rank}",
                t.rank()
            )))
        }
    };
    let c1 = dims(&w[0], 4, "conv1.weight")?;
    let c2 = dims(&w[1], 4, "conv2.weight")?;
    let f1 = dims(&w[2], 2, "fc1.weight")?;
    let f2 = dims(&w[3], 2, "fc2.weight")?;
    let cells = f1[1] / c2[0].max(1);
    let side = (cells as f64).sqrt().round() as usize;
    if side * side != cells || side * c2[0] * side != f1[1] {
        return Err(fmt(format!(
            "fc1 input {} is not conv2 channels × square map",
            f1[1]
        )));
    }
    let arch = ArchConfig {
        input_size: side * 4,
        conv1: c1[0],
        conv2: c2[0],
        hidden: f1[0],
        classes: f2[0],
    };
    if c1[1..] != [3, 3, 3] || c2[1..] != [c1[0], 3, 3] || f2[1] != f1[0] {
        return Err(fmt(format!("inconsistent layer shapes for {arch:?}")));
    }
    ToyConvNet::from_parameters(arch, w, Some(b)).map_err(|e| fmt(e.to_string()))
}

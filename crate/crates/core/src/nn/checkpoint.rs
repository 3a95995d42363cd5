//! Binary parameter container.
//!
//! ```text
//! magic        4 bytes   "ENTL"
//! version      u32 LE    currently 1
//! layer count  u64 LE
//! per layer, weights then bias, each as:
//!   rank       u64 LE
//!   dims       rank x u64 LE
//!   data       product(dims) x f64 LE
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::{LayerParams, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ENTL";
pub const VERSION: u32 = 1;

const MAX_RANK: u64 = 8;

pub fn write_checkpoint<W: Write>(mut w: W, layers: &[LayerParams]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(layers.len() as u64).to_le_bytes())?;
    for layer in layers {
        for t in [&layer.weights, &layer.bias] {
            w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let rank = read_u64(r)?;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Checkpoint(format!("implausible tensor rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| read_u64(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Checkpoint(format!("tensor shape {shape:?} overflows")))?;
    let mut bytes = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("truncated tensor data: {e}")))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<LayerParams>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Checkpoint(format!("missing magic: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)
        .map_err(|e| Error::Checkpoint(format!("missing version: {e}")))?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u64(&mut r)?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let weights = read_tensor(&mut r)?;
        let bias = read_tensor(&mut r)?;
        layers.push(LayerParams::new(weights, bias).map_err(|e| Error::Checkpoint(e.to_string()))?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::Checkpoint(e.to_string()))? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last layer".into()));
    }
    Ok(layers)
}

pub fn save(path: &Path, layers: &[LayerParams]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(f), layers).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<LayerParams>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}

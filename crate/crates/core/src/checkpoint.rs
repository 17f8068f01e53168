//! Binary checkpoint format.
//!
//! Layout: magic `SFAU1\n`, a little-endian u32 tensor count, then per
//! tensor a u16 name length, the UTF-8 name, a u8 rank, rank u32 dims and
//! the row-major f32 payload. An optional optimizer section of identical
//! structure follows, prefixed with `ADAM1\n`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{NetworkConfig, SalFAUNet};
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 6] = b"SFAU1\n";
pub const OPTIM_MAGIC: &[u8; 6] = b"ADAM1\n";

/// One named tensor in a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl TensorRecord {
    pub fn from_tensor(name: &str, t: &Tensor<f32>) -> Self {
        TensorRecord {
            name: name.to_string(),
            dims: t.shape().iter().map(|&d| d as u32).collect(),
            data: t.to_vec(),
        }
    }
}

pub fn encode(model: &[TensorRecord], optim: Option<&[TensorRecord]>) -> Vec<u8> {
    let mut out = Vec::new();
    encode_section(&mut out, MODEL_MAGIC, model);
    if let Some(records) = optim {
        encode_section(&mut out, OPTIM_MAGIC, records);
    }
    out
}

fn encode_section(out: &mut Vec<u8>, magic: &[u8; 6], records: &[TensorRecord]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        let name = r.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(r.dims.len() as u8);
        for &d in &r.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Vec<TensorRecord>, Option<Vec<TensorRecord>>)> {
    let mut pos = 0;
    let model = decode_section(bytes, &mut pos, MODEL_MAGIC, "SFAU1")?;
    let optim = if pos < bytes.len() {
        Some(decode_section(bytes, &mut pos, OPTIM_MAGIC, "ADAM1")?)
    } else {
        None
    };
    Ok((model, optim))
}

fn decode_section(
    bytes: &[u8],
    pos: &mut usize,
    magic: &[u8; 6],
    label: &str,
) -> Result<Vec<TensorRecord>> {
    if bytes.len() < *pos + 6 || &bytes[*pos..*pos + 6] != magic {
        return Err(Error::Checkpoint(format!("not a {label} checkpoint")));
    }
    *pos += 6;
    let count = read_u32(bytes, pos, label, "tensor count")? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u16(bytes, pos, label, "name length")? as usize;
        let name_bytes = take(bytes, pos, name_len)
            .ok_or_else(|| Error::Checkpoint(format!("{label}: truncated tensor name")))?;
        let name = String::from_utf8(name_bytes.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{label}: tensor name is not UTF-8")))?;
        let rank = *take(bytes, pos, 1)
            .ok_or_else(|| Error::Checkpoint(format!("{label}: truncated rank of {name}")))?
            .first()
            .expect("one byte");
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(read_u32(bytes, pos, label, &format!("dims of {name}"))?);
        }
        let numel: usize = dims.iter().map(|&d| d as usize).product();
        let payload = take(bytes, pos, numel * 4).ok_or_else(|| {
            Error::Checkpoint(format!(
                "{label}: truncated tensor {name}: expected {} data bytes",
                numel * 4
            ))
        })?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(TensorRecord { name, dims, data });
    }
    Ok(records)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Option<&'a [u8]> {
    if bytes.len() < *pos + n {
        return None;
    }
    let slice = &bytes[*pos..*pos + n];
    *pos += n;
    Some(slice)
}

fn read_u16(bytes: &[u8], pos: &mut usize, label: &str, what: &str) -> Result<u16> {
    take(bytes, pos, 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| Error::Checkpoint(format!("{label}: truncated {what}")))
}

fn read_u32(bytes: &[u8], pos: &mut usize, label: &str, what: &str) -> Result<u32> {
    take(bytes, pos, 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Checkpoint(format!("{label}: truncated {what}")))
}

pub fn save(path: &Path, model: &[TensorRecord], optim: Option<&[TensorRecord]>) -> Result<()> {
    fs::write(path, encode(model, optim))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Vec<TensorRecord>, Option<Vec<TensorRecord>>)> {
    decode(&fs::read(path)?)
}

impl SalFAUNet<f32> {
    /// All state tensors (parameters and running statistics) as records.
    pub fn to_records(&self) -> Vec<TensorRecord> {
        self.state()
            .iter()
            .map(|e| TensorRecord::from_tensor(&e.name, &e.tensor))
            .collect()
    }

    /// Restore state from records; the record set must cover the network's
    /// state exactly, with matching shapes.
    pub fn load_records(&self, records: &[TensorRecord]) -> Result<()> {
        let mut by_name: std::collections::HashMap<&str, &TensorRecord> =
            records.iter().map(|r| (r.name.as_str(), r)).collect();
        if by_name.len() != records.len() {
            return Err(Error::Checkpoint("duplicate tensor names".into()));
        }
        for entry in self.state() {
            let record = by_name.remove(entry.name.as_str()).ok_or_else(|| {
                Error::Checkpoint(format!("missing tensor {}", entry.name))
            })?;
            let dims: Vec<u32> = entry.tensor.shape().iter().map(|&d| d as u32).collect();
            if record.dims != dims {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has dims {:?}, expected {:?}",
                    entry.name, record.dims, dims
                )));
            }
            entry.tensor.data_mut().copy_from_slice(&record.data);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(())
    }
}

/// Recover the architecture from a model record set. The first encoder
/// conv weight `[base, in, 3, 3]` pins the channel plan; the input size
/// defaults to the 320-pixel evaluation protocol.
pub fn config_from_records(records: &[TensorRecord]) -> Result<NetworkConfig> {
    let first = records
        .iter()
        .find(|r| r.name == "enc0.conv1.weight")
        .ok_or_else(|| Error::Checkpoint("missing tensor enc0.conv1.weight".into()))?;
    if first.dims.len() != 4 {
        return Err(Error::Checkpoint(format!(
            "enc0.conv1.weight has rank {}, expected 4",
            first.dims.len()
        )));
    }
    let mut cfg = NetworkConfig::new(first.dims[0] as usize, 320);
    cfg.in_channels = first.dims[1] as usize;
    Ok(cfg)
}

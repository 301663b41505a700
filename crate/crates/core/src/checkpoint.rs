//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ADPR"            magic
//! u32               format version (1)
//! --- payload ---
//! u32 input_dim, u32 output_dim
//! u8  hidden activation code, u8 output activation code
//! u32 hidden layer count H
//! H × u32           hidden widths
//! H × f64           dropout rates
//! u64               init seed
//! u64               parameter count P
//! P × f64           parameters, per layer: weight (row-major) then bias
//! --- end payload ---
//! u32               CRC32 (IEEE) of the payload
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::ops::Activation;

pub const MAGIC: &[u8; 4] = b"ADPR";
pub const VERSION: u32 = 1;

pub fn encode(model: &Model) -> Vec<u8> {
    let spec = model.spec();
    let params = model.flat_parameters();
    let mut payload = Vec::with_capacity(64 + 8 * params.len());
    payload.extend((spec.input_dim as u32).to_le_bytes());
    payload.extend((spec.output_dim as u32).to_le_bytes());
    payload.push(spec.hidden_activation.code());
    payload.push(spec.output_activation.code());
    payload.extend((spec.hidden_widths.len() as u32).to_le_bytes());
    for &w in &spec.hidden_widths {
        payload.extend((w as u32).to_le_bytes());
    }
    for &r in &spec.dropout_rates {
        payload.extend(r.to_le_bytes());
    }
    payload.extend(spec.init_seed.to_le_bytes());
    payload.extend((params.len() as u64).to_le_bytes());
    for p in &params {
        payload.extend(p.to_le_bytes());
    }

    let mut out = Vec::with_capacity(payload.len() + 12);
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend(&payload);
    out.extend(crc32fast::hash(&payload).to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Length(format!(
                "checkpoint truncated: need {n} bytes at offset {}",
                self.at
            ))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn activation(code: u8) -> Result<Activation> {
    Activation::from_code(code)
        .ok_or_else(|| Error::Format(format!("unknown activation code {code}")))
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 12 {
        return Err(Error::Length(format!(
            "checkpoint of {} bytes is too short",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let payload = &bytes[8..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader { bytes: payload, at: 0 };
    let input_dim = r.u32()? as usize;
    let output_dim = r.u32()? as usize;
    let hidden_activation = activation(r.u8()?)?;
    let output_activation = activation(r.u8()?)?;
    let hidden = r.u32()? as usize;
    if hidden > payload.len() / 4 {
        return Err(Error::Length(format!("implausible hidden layer count {hidden}")));
    }
    let hidden_widths = (0..hidden)
        .map(|_| r.u32().map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let dropout_rates = (0..hidden).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let init_seed = r.u64()?;
    let spec = ModelSpec {
        input_dim,
        hidden_widths,
        output_dim,
        hidden_activation,
        output_activation,
        dropout_rates,
        init_seed,
    };
    spec.validate().map_err(|e| Error::Format(format!("invalid spec: {e}")))?;

    let count = r.u64()?;
    if count != spec.parameter_count() as u64 {
        return Err(Error::Consistency(format!(
            "spec needs {} parameters, checkpoint holds {count}",
            spec.parameter_count()
        )));
    }
    let params = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if r.at != payload.len() {
        return Err(Error::Length(format!(
            "{} trailing bytes after parameters",
            payload.len() - r.at
        )));
    }
    Model::from_flat(spec, &params)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

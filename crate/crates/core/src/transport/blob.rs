//! Weight blob: `version u16`, then one record per tensor in model order
//! (`name_len u16 | name | rank u8 | dims u32 * rank | f32 * prod(dims)`),
//! then a CRC32 of everything before it.

use super::{Result, TransportError};
use crate::nn::{ModelWeights, NamedTensor};

pub const BLOB_VERSION: u16 = 1;

/// Values are stored as `f32`; weights that are not already single precision
/// are rounded.
pub fn serialize_weights(w: &ModelWeights) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(2 + w.param_count() * 4 + w.tensors().len() * 32 + 4);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    for t in w.tensors() {
        let name = t.name.as_bytes();
        let name_len = u16::try_from(name.len()).map_err(|_| {
            TransportError::MalformedBlob(format!("tensor name of {} bytes", name.len()))
        })?;
        let rank = u8::try_from(t.dims.len())
            .map_err(|_| TransportError::MalformedBlob(format!("rank {} tensor", t.dims.len())))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &t.dims {
            let d = u32::try_from(d)
                .map_err(|_| TransportError::MalformedBlob(format!("dimension {d}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for (index, &v) in t.data.iter().enumerate() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(TransportError::NonFiniteValue {
                    tensor: t.name.clone(),
                    index,
                });
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.buf.len() => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(TransportError::MalformedBlob(format!(
                "record overruns blob at offset {}",
                self.pos
            ))),
        }
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn deserialize_weights(bytes: &[u8]) -> Result<ModelWeights> {
    if bytes.len() < 6 {
        return Err(TransportError::MalformedBlob(format!(
            "{} bytes is too short",
            bytes.len()
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(TransportError::CrcMismatch { stored, computed });
    }
    let mut cur = Cursor { buf: body, pos: 0 };
    let version = cur.u16()?;
    if version != BLOB_VERSION {
        return Err(TransportError::MalformedBlob(format!(
            "unsupported version {version}"
        )));
    }
    let mut tensors = Vec::new();
    while cur.pos < body.len() {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| TransportError::MalformedBlob("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.take(1)?[0] as usize;
        let dims = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c.checked_mul(4).is_some_and(|b| b <= body.len()))
            .ok_or_else(|| {
                TransportError::MalformedBlob(format!("tensor {name} declares {dims:?}"))
            })?;
        let raw = cur.take(count * 4)?;
        let mut data = Vec::with_capacity(count);
        for (index, chunk) in raw.chunks_exact(4).enumerate() {
            let f = f32::from_le_bytes(chunk.try_into().unwrap());
            if !f.is_finite() {
                return Err(TransportError::NonFiniteValue {
                    tensor: name,
                    index,
                });
            }
            data.push(f as f64);
        }
        tensors.push(
            NamedTensor::new(name, dims, data)
                .map_err(|e| TransportError::MalformedBlob(e.to_string()))?,
        );
    }
    ModelWeights::new(tensors).map_err(|e| TransportError::MalformedBlob(e.to_string()))
}

//! Checkpoint container, all integers and floats little-endian:
//!
//! ```text
//! b"MCKP"  u32 version
//! u32 n    n bytes of UTF-8 JSON {"model": ToyConfig, "schedule": EdmSchedule}
//! u32 count
//! count × { u32 name_len, name, u32 ndim, ndim × u64 dim, prod(dim) × f64 }
//! ```

use serde::{Deserialize, Serialize};

use super::edm::EdmSchedule;
use super::model::{ToyConfig, ToyDenoiser};
use super::params::Param;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_TENSORS: usize = 4096;
const MAX_ELEMENTS: u64 = 1 << 28;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ToyConfig,
    schedule: EdmSchedule,
}

pub fn encode_checkpoint(model: &ToyDenoiser) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let header = serde_json::to_vec(&Header {
        model: model.config,
        schedule: model.schedule,
    })
    .expect("header serializes");
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let items = model.params.items();
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for p in items {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(field, "truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }
}

fn decode_tensors(r: &mut Reader) -> Result<Vec<Param>> {
    let count = r.u32("tensor count")? as usize;
    if count > MAX_TENSORS {
        return Err(Error::format("tensor count", format!("{count} exceeds {MAX_TENSORS}")));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u32(&format!("tensor[{i}].name"))? as usize;
        let name = std::str::from_utf8(r.take(name_len, &format!("tensor[{i}].name"))?)
            .map_err(|_| Error::format(format!("tensor[{i}].name"), "not UTF-8"))?
            .to_string();
        let ndim = r.u32(&format!("{name}.ndim"))? as usize;
        if ndim > 8 {
            return Err(Error::format(format!("{name}.ndim"), "more than 8 dimensions"));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut elements: u64 = 1;
        for _ in 0..ndim {
            let d = r.u64(&format!("{name}.shape"))?;
            elements = elements
                .checked_mul(d)
                .filter(|&e| e <= MAX_ELEMENTS)
                .ok_or_else(|| Error::format(format!("{name}.shape"), "too many elements"))?;
            shape.push(d as usize);
        }
        let raw = r.take(elements as usize * 8, &format!("{name}.data"))?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(format!("{name}.data"), "non-finite value"));
        }
        out.push(Param { name, shape, data });
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ToyDenoiser> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format("magic", "not a checkpoint"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let header_len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| Error::format("header", e.to_string()))?;
    let tensors = decode_tensors(&mut r)?;
    if r.pos != bytes.len() {
        return Err(Error::format("trailer", "unexpected bytes after the last tensor"));
    }
    let mut model = ToyDenoiser::new(header.model, header.schedule)?;
    model.params.load(&tensors)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_is_bit_identical() {
        let mut m = ToyDenoiser::new(ToyConfig { init_seed: 3, ..ToyConfig::default() }, EdmSchedule::default()).unwrap();
        let mut flat = m.params.flatten();
        flat.iter_mut().enumerate().for_each(|(i, v)| *v += (i as f64).sin() * 1e-3);
        m.params.set_flat(&flat);
        let bytes = encode_checkpoint(&m);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let m = ToyDenoiser::new(ToyConfig::default(), EdmSchedule::default()).unwrap();
        let bytes = encode_checkpoint(&m);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }

    proptest! {
        #[test]
        fn never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = decode_checkpoint(&bytes);
            let mut framed = CHECKPOINT_MAGIC.to_vec();
            framed.extend_from_slice(&bytes);
            let _ = decode_checkpoint(&framed);
        }
    }
}

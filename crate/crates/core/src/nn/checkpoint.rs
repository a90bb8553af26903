//! Parameter checkpoint file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HFW1"  u32 count
//! per parameter:
//!   u32 name_len, name bytes (utf-8)
//!   u32 rank, rank x u64 extents
//!   u8 frozen
//!   product(extents) x f64
//! ```

use std::fs;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HFW1";

pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &e in p.value.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        out.push(u8::from(p.frozen));
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                field,
                detail: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}

/// Decode a checkpoint into `(name, value, frozen)` records in file order.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor, bool)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            field: "magic",
            detail: "expected HFW1".into(),
        });
    }
    let count = r.u32("count")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(len, "name")?.to_vec()).map_err(|e| Error::Format {
            field: "name",
            detail: e.to_string(),
        })?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let frozen = match r.take(1, "frozen")?[0] {
            0 => false,
            1 => true,
            b => {
                return Err(Error::Format {
                    field: "frozen",
                    detail: format!("byte {b} is not 0 or 1"),
                })
            }
        };
        let n: usize = shape.iter().product();
        let payload = r.take(n * 8, "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?, frozen));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            field: "payload",
            detail: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(out)
}

pub fn save_checkpoint(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(store)).map_err(|e| Error::io(path, e))
}

/// Load values and freeze flags into an existing store with the same layout.
pub fn load_checkpoint(store: &mut ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    apply_checkpoint(store, &decode_checkpoint(&bytes)?)
}

pub fn apply_checkpoint(store: &mut ParamStore, records: &[(String, Tensor, bool)]) -> Result<()> {
    if records.len() != store.len() {
        return Err(Error::contract(format!(
            "checkpoint has {} parameters, model has {}",
            records.len(),
            store.len()
        )));
    }
    for (name, value, frozen) in records {
        let id = store
            .id(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))?;
        let p = store.get_mut(id);
        if p.value.shape() != value.shape() {
            return Err(Error::dim(format!(
                "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                value.shape(),
                p.value.shape()
            )));
        }
        p.value = value.clone();
        p.frozen = *frozen;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.add(
            "a/w0",
            Tensor::new(
                vec![2, 3],
                vec![1.5, -2.0, 0.1, 3.0, f64::MIN_POSITIVE, -0.0],
            )
            .unwrap(),
        )
        .unwrap();
        let b = s
            .add("a/b0", Tensor::new(vec![3], vec![0.25, 0.5, 0.75]).unwrap())
            .unwrap();
        s.get_mut(b).frozen = true;
        s
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let s = sample();
        let bytes = encode_checkpoint(&s);
        assert_eq!(&bytes[..4], b"HFW1");
        let mut t = sample();
        for p in t.iter_mut() {
            p.value.data_mut().fill(9.0);
            p.frozen = false;
        }
        apply_checkpoint(&mut t, &decode_checkpoint(&bytes).unwrap()).unwrap();
        for ((_, a), (_, b)) in s.iter().zip(t.iter()) {
            assert_eq!(a.frozen, b.frozen);
            let ab: Vec<u64> = a.value.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn bad_magic_and_truncation_rejected() {
        let mut bytes = encode_checkpoint(&sample());
        bytes[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::Format { field: "magic", .. })
        ));
        let bytes = encode_checkpoint(&sample());
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            decode_checkpoint(cut),
            Err(Error::Format {
                field: "payload",
                ..
            })
        ));
    }
}

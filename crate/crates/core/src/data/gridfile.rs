//! Binary grid series file.
//!
//! ```text
//! "HFG1"
//! u32 version (1)
//! u32 n_lat, u32 n_lon, u32 channels
//! u64 n_steps
//! f64 step_hours
//! u64 start_index
//! n_steps * n_lat * n_lon * channels f64 payload
//! ```
//!
//! Everything little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const GRID_MAGIC: &[u8; 4] = b"HFG1";
pub const GRID_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 * 3 + 8 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFileHeader {
    pub version: u32,
    pub n_lat: u32,
    pub n_lon: u32,
    pub channels: u32,
    pub n_steps: u64,
    pub step_hours: f64,
    pub start_index: u64,
}

impl GridFileHeader {
    pub fn new(
        n_lat: usize,
        n_lon: usize,
        channels: usize,
        n_steps: usize,
        step_hours: f64,
        start_index: usize,
    ) -> Self {
        Self {
            version: GRID_VERSION,
            n_lat: n_lat as u32,
            n_lon: n_lon as u32,
            channels: channels as u32,
            n_steps: n_steps as u64,
            step_hours,
            start_index: start_index as u64,
        }
    }

    pub fn values_per_step(&self) -> usize {
        self.n_lat as usize * self.n_lon as usize * self.channels as usize
    }

    pub fn payload_len(&self) -> usize {
        self.n_steps as usize * self.values_per_step()
    }
}

/// Header plus a `[n_steps, n_lat, n_lon, channels]` payload.
pub fn encode_grid(header: &GridFileHeader, data: &Tensor) -> Result<Vec<u8>> {
    if data.len() != header.payload_len() {
        return Err(Error::Format {
            field: "payload",
            detail: format!(
                "header describes {} values, tensor holds {}",
                header.payload_len(),
                data.len()
            ),
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 8);
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&header.version.to_le_bytes());
    out.extend_from_slice(&header.n_lat.to_le_bytes());
    out.extend_from_slice(&header.n_lon.to_le_bytes());
    out.extend_from_slice(&header.channels.to_le_bytes());
    out.extend_from_slice(&header.n_steps.to_le_bytes());
    out.extend_from_slice(&header.step_hours.to_le_bytes());
    out.extend_from_slice(&header.start_index.to_le_bytes());
    for v in data.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<(GridFileHeader, Tensor)> {
    let need = |field: &'static str, end: usize| -> Result<()> {
        if bytes.len() < end {
            Err(Error::Format {
                field,
                detail: format!("file ends at byte {}", bytes.len()),
            })
        } else {
            Ok(())
        }
    };
    need("magic", 4)?;
    if &bytes[..4] != GRID_MAGIC {
        return Err(Error::Format {
            field: "magic",
            detail: "expected HFG1".into(),
        });
    }
    need("header", HEADER_LEN)?;
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let header = GridFileHeader {
        version: u32_at(4),
        n_lat: u32_at(8),
        n_lon: u32_at(12),
        channels: u32_at(16),
        n_steps: u64_at(20),
        step_hours: f64::from_le_bytes(bytes[28..36].try_into().unwrap()),
        start_index: u64_at(36),
    };
    if header.version != GRID_VERSION {
        return Err(Error::Format {
            field: "version",
            detail: format!("unsupported version {}", header.version),
        });
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = header
        .n_steps
        .checked_mul(header.values_per_step() as u64)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::Format {
            field: "n_steps",
            detail: "payload size overflows".into(),
        })?;
    if payload.len() as u64 != expected {
        return Err(Error::Format {
            field: "payload",
            detail: format!("expected {expected} bytes, found {}", payload.len()),
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let shape = vec![
        header.n_steps as usize,
        header.n_lat as usize,
        header.n_lon as usize,
        header.channels as usize,
    ];
    Ok((header, Tensor::new(shape, data)?))
}

pub fn write_grid_file(
    path: impl AsRef<Path>,
    header: &GridFileHeader,
    data: &Tensor,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_grid(header, data)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_grid_file(path: impl AsRef<Path>) -> Result<(GridFileHeader, Tensor)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grid(&bytes)
}

/// Split a `[n_steps, n_lat, n_lon, C]` payload into per-step states.
pub fn split_states(header: &GridFileHeader, data: &Tensor) -> Vec<Tensor> {
    let per = header.values_per_step();
    let shape = vec![
        header.n_lat as usize,
        header.n_lon as usize,
        header.channels as usize,
    ];
    data.data()
        .chunks(per.max(1))
        .take(header.n_steps as usize)
        .map(|c| Tensor::new(shape.clone(), c.to_vec()).expect("chunk shape"))
        .collect()
}

/// Stack equal-shape `[n_lat, n_lon, C]` states into one payload tensor.
pub fn stack_states(
    states: &[Tensor],
    n_lat: usize,
    n_lon: usize,
    channels: usize,
) -> Result<Tensor> {
    let mut data = Vec::with_capacity(states.len() * n_lat * n_lon * channels);
    for s in states {
        if s.shape() != [n_lat, n_lon, channels] {
            return Err(Error::dim(format!("state shape {:?}", s.shape())));
        }
        data.extend_from_slice(s.data());
    }
    Tensor::new(vec![states.len(), n_lat, n_lon, channels], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bit_identical() {
        let h = GridFileHeader::new(2, 4, 3, 2, 6.0, 17);
        let data: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).sin() * 1e-3).collect();
        let t = Tensor::new(vec![2, 2, 4, 3], data).unwrap();
        let bytes = encode_grid(&h, &t).unwrap();
        let (h2, t2) = decode_grid(&bytes).unwrap();
        assert_eq!(h, h2);
        let a: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_payload_rejected() {
        let h = GridFileHeader::new(2, 4, 1, 1, 6.0, 0);
        let bytes = encode_grid(&h, &Tensor::zeros(&[1, 2, 4, 1])).unwrap();
        let err = decode_grid(&bytes[..bytes.len() - 8]).unwrap_err();
        assert!(matches!(
            err,
            Error::Format {
                field: "payload",
                ..
            }
        ));
    }

    #[test]
    fn bad_magic_and_version_rejected() {
        let h = GridFileHeader::new(2, 4, 1, 0, 6.0, 0);
        let mut bytes = encode_grid(&h, &Tensor::zeros(&[0, 2, 4, 1])).unwrap();
        bytes[4] = 9;
        assert!(matches!(
            decode_grid(&bytes),
            Err(Error::Format {
                field: "version",
                ..
            })
        ));
        bytes[0] = b'Z';
        assert!(matches!(
            decode_grid(&bytes),
            Err(Error::Format { field: "magic", .. })
        ));
    }

    #[test]
    fn empty_series_is_valid() {
        let h = GridFileHeader::new(2, 4, 2, 0, 6.0, 5);
        let bytes = encode_grid(&h, &Tensor::zeros(&[0, 2, 4, 2])).unwrap();
        let (h2, t) = decode_grid(&bytes).unwrap();
        assert_eq!(h2.n_steps, 0);
        assert!(t.is_empty());
        assert!(split_states(&h2, &t).is_empty());
    }
}

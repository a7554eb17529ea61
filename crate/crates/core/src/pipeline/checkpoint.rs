//! Binary checkpoint container.
//!
//! Layout, all integers little-endian: `u32 version`, `u64 fingerprint`,
//! `u32 entry count`, then per entry `u32 name length`, UTF-8 name bytes,
//! `u32 rank`, `rank × u32 dims`, and `Π dims` f64 values.

use std::fs;
use std::path::Path;

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_RANK: u32 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            dims: vec![m.rows() as u32, m.cols() as u32],
            data: m.as_slice().to_vec(),
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            dims: vec![values.len() as u32],
            data: values,
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.dims.as_slice() {
            &[r, c] if r > 0 && c > 0 => Matrix::from_vec(r as usize, c as usize, self.data.clone()),
            &[n] if n > 0 => Matrix::from_vec(1, n as usize, self.data.clone()),
            dims => Err(Error::Malformed {
                what: "checkpoint",
                detail: format!("tensor of dims {dims:?} is not a matrix"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub fingerprint: u64,
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(fingerprint: u64) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            fingerprint,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::Malformed {
            what: "checkpoint",
            detail: format!("missing entry {name}"),
        })
    }

    /// Rejects a fingerprint other than `expected` unless `force` is set.
    pub fn check_fingerprint(&self, expected: u64, force: bool) -> Result<()> {
        if self.fingerprint != expected && !force {
            return Err(Error::FingerprintMismatch {
                expected,
                found: self.fingerprint,
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&u32_len(self.entries.len())?.to_le_bytes());
        for (name, t) in &self.entries {
            let count = t.dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
            if t.dims.len() as u32 > MAX_RANK || count != Some(t.data.len()) {
                return Err(Error::InvalidArgument(format!("entry {name}: dims {:?} do not match data", t.dims)));
            }
            out.extend_from_slice(&u32_len(name.len())?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let fingerprint = r.u64()?;
        let count = r.u32()?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Malformed {
                    what: "checkpoint",
                    detail: "entry name is not UTF-8".into(),
                })?
                .to_string();
            let rank = r.u32()?;
            if rank > MAX_RANK {
                return Err(Error::Malformed {
                    what: "checkpoint",
                    detail: format!("entry {name} has rank {rank}"),
                });
            }
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .ok_or(Error::Truncated)?;
            let raw = r.take(n.checked_mul(8).ok_or(Error::Truncated)?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            entries.push((name, Tensor { dims, data }));
        }
        if r.at != bytes.len() {
            return Err(Error::Malformed {
                what: "checkpoint",
                detail: format!("{} trailing bytes", bytes.len() - r.at),
            });
        }
        Ok(Self {
            version,
            fingerprint,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("length {n} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).ok_or(Error::Truncated)?;
        if end > self.bytes.len() {
            return Err(Error::Truncated);
        }
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(0xdead_beef);
        c.push("w", Tensor::from_matrix(&Matrix::from_rows(&[[1.0, -2.5], [3.0, 0.125]])));
        c.push("meta/stage", Tensor::vector(vec![2.0]));
        c.push("empty", Tensor { dims: vec![0], data: vec![] });
        c
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let bytes = sample().encode().unwrap();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = sample().encode().unwrap();
        for cut in [0, 3, 11, 15, bytes.len() - 1] {
            assert!(matches!(Checkpoint::decode(&bytes[..cut]), Err(Error::Truncated)), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = 9;
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::VersionMismatch { found: 9, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(Checkpoint::decode(&long), Err(Error::Malformed { .. })));
    }

    #[test]
    fn fingerprint_check() {
        let c = sample();
        assert!(c.check_fingerprint(0xdead_beef, false).is_ok());
        assert!(matches!(c.check_fingerprint(1, false), Err(Error::FingerprintMismatch { .. })));
        assert!(c.check_fingerprint(1, true).is_ok());
    }

    #[test]
    fn tensor_matrix_conversion() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0]]);
        assert_eq!(Tensor::from_matrix(&m).to_matrix().unwrap(), m);
        assert_eq!(Tensor::vector(vec![1.0, 2.0, 3.0]).to_matrix().unwrap(), m);
        assert!(Tensor { dims: vec![1, 1, 1], data: vec![0.0] }.to_matrix().is_err());
    }
}

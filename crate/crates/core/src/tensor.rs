//! EMLT binary tensor files.
//!
//! Layout (all little-endian):
//!
//! ```text
//! b"EMLT" | version: u16 | dtype: u16 | ndim: u16 | dims: ndim x u64 | payload (row-major)
//! ```
//!
//! dtype 0 is f32, dtype 1 is f64. Values are held as f64 in memory regardless
//! of the on-disk precision.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMLT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DType {
    #[default]
    F32,
    F64,
}

impl DType {
    fn code(self) -> u16 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn from_code(code: u16) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// A dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Data(format!(
                "tensor dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self, dtype: DType) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 8 * self.dims.len() + dtype.width() * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&dtype.code().to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u16).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match dtype {
            DType::F32 => {
                for &v in &self.data {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            DType::F64 => {
                for &v in &self.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = cur.u16()?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let dtype = DType::from_code(cur.u16()?).ok_or("unknown dtype code")?;
        let ndim = cur.u16()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            dims.push(usize::try_from(d).map_err(|_| "dimension overflow")?);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or("dimension overflow")?;
        let payload = cur.take(count.checked_mul(dtype.width()).ok_or("dimension overflow")?)?;
        if cur.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - cur.pos));
        }
        let data = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path, dtype: DType) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes(dtype)).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).ok_or("truncated")?;
        if end > self.bytes.len() {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let b = t.to_bytes(DType::F32);
        assert_eq!(&b[..4], b"EMLT");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u16::from_le_bytes([b[6], b[7]]), 0);
        assert_eq!(u16::from_le_bytes([b[8], b[9]]), 2);
        assert_eq!(u64::from_le_bytes(b[10..18].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[18..26].try_into().unwrap()), 3);
        assert_eq!(b.len(), 26 + 6 * 4);
        assert_eq!(f32::from_le_bytes(b[30..34].try_into().unwrap()), 1.0);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Tensor::from_bytes(b"NOPE").is_err());
        let t = Tensor::new(vec![4], vec![1.0; 4]).unwrap();
        let mut b = t.to_bytes(DType::F64);
        b.pop();
        assert!(Tensor::from_bytes(&b).is_err());
        b.extend_from_slice(&[0, 0]);
        assert!(Tensor::from_bytes(&b).is_err());
    }

    #[test]
    fn shape_mismatch() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn f64_roundtrip_is_lossless(data in proptest::collection::vec(-1e6f64..1e6, 0..64)) {
            let t = Tensor::new(vec![data.len()], data).unwrap();
            let back = Tensor::from_bytes(&t.to_bytes(DType::F64)).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}

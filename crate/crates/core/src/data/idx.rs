//! The IDX container (big-endian header, unsigned-byte payload).

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The only payload type supported: unsigned bytes.
pub const TYPE_U8: u8 = 0x08;

/// Raw contents of an IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxFile {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn at(offset: usize, message: impl Into<String>) -> Error {
    Error::ParseAt {
        offset,
        message: message.into(),
    }
}

impl IdxFile {
    pub fn new(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        let n = element_count(&dims).ok_or_else(|| Error::Data("IDX dimensions overflow".into()))?;
        if dims.is_empty() || dims.len() > 255 || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Data(format!("IDX rank/dims out of range: {dims:?}")));
        }
        if n != data.len() {
            return Err(Error::Data(format!("IDX dims {dims:?} need {n} bytes, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(at(bytes.len(), format!("truncated header: {} of 4 magic bytes", bytes.len())));
        }
        if bytes[0] != 0 || bytes[1] != 0 {
            return Err(at(0, format!("bad magic {:02x} {:02x}, expected 00 00", bytes[0], bytes[1])));
        }
        if bytes[2] != TYPE_U8 {
            return Err(at(2, format!("unsupported data type code 0x{:02x}", bytes[2])));
        }
        let rank = bytes[3] as usize;
        if rank == 0 {
            return Err(at(3, "rank 0"));
        }
        let mut dims = Vec::with_capacity(rank);
        for i in 0..rank {
            let off = 4 + 4 * i;
            let raw = bytes
                .get(off..off + 4)
                .ok_or_else(|| at(bytes.len(), format!("truncated header: dimension {i} missing")))?;
            dims.push(u32::from_be_bytes(raw.try_into().expect("4 bytes")) as usize);
        }
        let header = 4 + 4 * rank;
        let n = element_count(&dims).ok_or_else(|| at(4, "dimension product overflows"))?;
        let payload = &bytes[header..];
        if payload.len() < n {
            return Err(at(bytes.len(), format!("truncated payload: {} of {n} bytes", payload.len())));
        }
        if payload.len() > n {
            return Err(at(header + n, format!("{} trailing bytes", payload.len() - n)));
        }
        Ok(Self {
            dims,
            data: payload.to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&[0, 0, TYPE_U8, self.dims.len() as u8]);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }

    /// Pixel bytes scaled to `[0, 1]`, shaped like the file.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let inv = T::lit(1.0 / 255.0);
        let data = self.data.iter().map(|&b| T::lit(b as f64) * inv).collect();
        Tensor::from_vec(&self.dims, data).expect("dims match payload")
    }

    /// Raw bytes as class indices (rank-1 files).
    pub fn to_labels(&self) -> Result<Vec<usize>> {
        if self.dims.len() != 1 {
            return Err(Error::Data(format!("label file must be rank 1, got dims {:?}", self.dims)));
        }
        Ok(self.data.iter().map(|&b| b as usize).collect())
    }

    /// Quantizes `[0, 1]` values to bytes (clamped, rounded).
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let data = t
            .data()
            .iter()
            .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self::new(t.shape().to_vec(), data)
    }

    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let data = labels
            .iter()
            .map(|&l| u8::try_from(l).map_err(|_| Error::Data(format!("label {l} does not fit a byte"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(vec![labels.len()], data)
    }
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxFile> {
    IdxFile::parse(&std::fs::read(path)?)
}

/// Reads an IDX file as a `[0, 1]`-scaled tensor.
pub fn read_idx_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    Ok(read_idx(path)?.to_tensor())
}

pub fn write_idx(path: impl AsRef<Path>, file: &IdxFile) -> Result<()> {
    std::fs::write(path, file.to_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(dims: &[u32]) -> Vec<u8> {
        let mut b = vec![0, 0, 8, dims.len() as u8];
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b
    }

    #[test]
    fn image_file_parses() {
        let mut b = header(&[2, 28, 28]);
        b.extend((0..1568).map(|i| (i % 256) as u8));
        let f = IdxFile::parse(&b).unwrap();
        let t = f.to_tensor::<f64>();
        assert_eq!(t.shape(), &[2, 28, 28]);
        assert_eq!(t.data()[255], 1.0);
        assert_eq!(f.to_bytes(), b);
    }

    #[test]
    fn label_file_parses() {
        let mut b = header(&[5]);
        b.extend([3, 1, 4, 1, 5]);
        assert_eq!(IdxFile::parse(&b).unwrap().to_labels().unwrap(), vec![3, 1, 4, 1, 5]);
    }

    fn offset_of(bytes: &[u8]) -> usize {
        match IdxFile::parse(bytes) {
            Err(Error::ParseAt { offset, .. }) => offset,
            other => panic!("expected located error, got {other:?}"),
        }
    }

    #[test]
    fn located_errors() {
        assert_eq!(offset_of(&[]), 0);
        assert_eq!(offset_of(&[1, 0, 8, 1]), 0);
        assert_eq!(offset_of(&[0, 0, 0x0d, 1]), 2);
        assert_eq!(offset_of(&[0, 0, 8, 0]), 3);
        assert_eq!(offset_of(&[0, 0, 8, 2, 0, 0, 0, 1]), 8);
        let mut b = header(&[4]);
        b.extend([1, 2]);
        assert_eq!(offset_of(&b), 10);
        b.extend([3, 4, 5]);
        assert_eq!(offset_of(&b), 12);
    }
}

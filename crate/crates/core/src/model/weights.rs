//! Binary weight files.
//!
//! Little-endian layout:
//!
//! ```text
//! "BWT1" | u32 version (=1) | u64 config fingerprint | u32 tensor count
//! per tensor: u16 name length | name (UTF-8) | u8 ndim | u32 dims[ndim] | f32 payload
//! ```

use std::fs;
use std::path::Path;

use super::{ModelError, Result};
use crate::nn::Tensor;

pub const MAGIC: &[u8; 4] = b"BWT1";
pub const FORMAT_VERSION: u32 = 1;

/// Named parameter tensors plus the fingerprint of the producing config.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSnapshot {
    pub fingerprint: u64,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl WeightSnapshot {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let name_len =
                u16::try_from(name.len()).map_err(|_| ModelError::Format(format!("tensor name too long: {name}")))?;
            let ndim =
                u8::try_from(t.ndim()).map_err(|_| ModelError::Format(format!("too many dimensions in {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(ndim);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| ModelError::Format(format!("dimension too large in {name}")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(ModelError::Format("bad magic, not a weight file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(ModelError::Format(format!("unsupported format version {version}")));
        }
        let fingerprint = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| ModelError::Format("tensor name is not UTF-8".into()))?;
            let ndim = r.take(1)?[0] as usize;
            let shape = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let payload = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| ModelError::Format(format!("tensor {name} is impossibly large")))?,
            )?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.at != bytes.len() {
            return Err(ModelError::Format(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.at
            )));
        }
        Ok(Self { fingerprint, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Format("truncated weight file".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
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

    fn sample() -> WeightSnapshot {
        WeightSnapshot {
            fingerprint: 0xDEAD_BEEF_0123_4567,
            tensors: vec![
                ("a/kernel".into(), Tensor::from_f64(&[2, 1], &[1.5, -0.25]).unwrap()),
                (
                    "a/bias".into(),
                    Tensor::from_f64(&[1], &[f64::from(f32::MIN_POSITIVE)]).unwrap(),
                ),
            ],
        }
    }

    #[test]
    fn byte_layout() {
        let bytes = sample().encode().unwrap();
        assert_eq!(&bytes[..4], b"BWT1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(
            u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
            0xDEAD_BEEF_0123_4567
        );
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes(bytes[20..22].try_into().unwrap()), 8);
        assert_eq!(&bytes[22..30], b"a/kernel");
        assert_eq!(bytes[30], 2);
        // header 20 + (2+8+1+8+8) + (2+6+1+4+4)
        assert_eq!(bytes.len(), 20 + 27 + 17);
    }

    #[test]
    fn round_trip_is_exact() {
        let s = sample();
        assert_eq!(WeightSnapshot::decode(&s.encode().unwrap()).unwrap(), s);
    }

    #[test]
    fn corrupted_magic_and_truncation_are_rejected() {
        let mut bytes = sample().encode().unwrap();
        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(WeightSnapshot::decode(truncated), Err(ModelError::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(WeightSnapshot::decode(&bytes), Err(ModelError::Format(_))));
    }
}

//! Flat binary container of named `f64` arrays, used for model checkpoints
//! and attribution batches.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"SDAR" | u32 version (1) | u32 entry count
//! per entry:
//!   u32 name length | name bytes (UTF-8)
//!   u32 ndim | u64 × ndim extents
//!   f64 × product(extents) values
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"SDAR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub value: Tensor,
}

pub fn encode_arrays(arrays: &[NamedArray]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
        out.extend_from_slice(a.name.as_bytes());
        out.extend_from_slice(&(a.value.ndim() as u32).to_le_bytes());
        for &d in a.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in a.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_arrays(bytes: &[u8]) -> Result<Vec<NamedArray>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err(&format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut arrays = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| format_err("name is not UTF-8"))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push(NamedArray {
            name,
            value: Tensor::new(shape, data)?,
        });
    }
    if r.pos != bytes.len() {
        return Err(format_err("trailing bytes"));
    }
    Ok(arrays)
}

pub fn write_arrays(path: impl AsRef<Path>, arrays: &[NamedArray]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_arrays(arrays)).map_err(|e| Error::io(path, e))
}

pub fn read_arrays(path: impl AsRef<Path>) -> Result<Vec<NamedArray>> {
    let path = path.as_ref();
    decode_arrays(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn format_err(reason: &str) -> Error {
    Error::Format {
        what: "array file".into(),
        reason: reason.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            what: "array file".into(),
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InputKind;
    use crate::models::{Architecture, Model, ModelSpec};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn arrays_round_trip(entries in prop::collection::vec(
            ("[a-z./0-9]{0,12}", prop::collection::vec(1usize..4, 0..3)),
            0..5,
        ), seed in any::<u64>()) {
            let arrays: Vec<NamedArray> = entries
                .into_iter()
                .enumerate()
                .map(|(i, (name, shape))| {
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|j| ((seed ^ (i * 31 + j) as u64) as f64).sin()).collect();
                    NamedArray { name, value: Tensor::new(shape, data).unwrap() }
                })
                .collect();
            prop_assert_eq!(decode_arrays(&encode_arrays(&arrays)).unwrap(), arrays);
        }
    }

    #[test]
    fn model_reload_restores_logits() {
        let kind = InputKind::Sequence { steps: 4, features: 2 };
        let a = Model::init(&ModelSpec::new(Architecture::Lstm, vec![3], 5, 1), kind).unwrap();
        let mut b = Model::init(&ModelSpec::new(Architecture::Lstm, vec![3], 5, 2), kind).unwrap();
        let bytes = encode_arrays(&a.to_arrays());
        b.load_arrays(&decode_arrays(&bytes).unwrap()).unwrap();
        assert_eq!(a.checksum(), b.checksum());
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = encode_arrays(&[NamedArray { name: "w".into(), value: Tensor::from_vec(vec![1.0, 2.0]) }]);
        assert!(matches!(decode_arrays(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
        assert!(decode_arrays(b"NOPE").is_err());
    }
}

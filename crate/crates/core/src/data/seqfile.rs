//! Binary container for user-supplied sequence datasets.
//!
//! Layout, all little-endian:
//!
//! ```text
//! u32 count | u32 steps | u32 features
//! f64 × (count · steps · features)   values, example-major then step-major
//! u32 × count                        labels
//! ```

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub fn load_sequences(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_sequences(&bytes)
}

pub fn parse_sequences(bytes: &[u8]) -> Result<LabeledDataset> {
    let truncated = |expected: usize| Error::Truncated {
        what: "sequence file".into(),
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 12 {
        return Err(truncated(12));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (count, steps, features) = (word(0), word(4), word(8));
    let values = count * steps * features;
    let expected = 12 + values * 8 + count * 4;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(Error::Format {
            what: "sequence file".into(),
            reason: format!("{} trailing bytes", bytes.len() - expected),
        });
    }
    let data = bytes[12..12 + values * 8]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels: Vec<usize> = bytes[12 + values * 8..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    LabeledDataset::new(Tensor::new(vec![count, steps, features], data)?, labels, classes)
}

pub fn write_sequences(path: impl AsRef<Path>, data: &LabeledDataset) -> Result<()> {
    let path = path.as_ref();
    let &[count, steps, features] = data.inputs().shape() else {
        return Err(Error::invalid("only [N, T, F] datasets can be written as sequences"));
    };
    let mut out = Vec::with_capacity(12 + data.inputs().len() * 8 + count * 4);
    for d in [count, steps, features] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data.inputs().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &y in data.labels() {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

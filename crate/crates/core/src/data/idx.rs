use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an IDX image/label file pair (the MNIST distribution format).
/// Pixels are scaled to `[0, 1]`; images come out as `[N, 1, rows, cols]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
    let images = parse_idx_images(&read(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&read(labels_path.as_ref())?)?;
    let count = images.shape()[0];
    if count != labels.len() {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    LabeledDataset::new(images, labels, classes)
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            what: format!("{what} header"),
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], kind: &'static str, expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0, kind)?;
    if found != expected {
        return Err(Error::BadMagic { kind, expected, found });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    check_magic(bytes, "images", IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            what: "image payload".into(),
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[16..expected].iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new(vec![count, 1, rows, cols], data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, "labels", LABELS_MAGIC)?;
    let count = be_u32(bytes, 4, "labels")? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            what: "label payload".into(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..expected].iter().map(|&b| usize::from(b)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images_file(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IMAGES_MAGIC, count, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn labels_file(magic: u32, labels: &[u8]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn parses_and_scales() {
        let t = parse_idx_images(&images_file(2, 2, 2, &[0, 255, 51, 102, 0, 0, 0, 255])).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 2]);
        assert_eq!(t.data()[1], 1.0);
        assert!((t.data()[2] - 0.2).abs() < 1e-12);
        assert_eq!(parse_idx_labels(&labels_file(LABELS_MAGIC, &[3, 7])).unwrap(), vec![3, 7]);
    }

    #[test]
    fn wrong_magic_for_labels() {
        let err = parse_idx_labels(&labels_file(IMAGES_MAGIC, &[1])).unwrap_err();
        assert!(err.to_string().contains("wrong magic for labels"), "{err}");
    }

    #[test]
    fn empty_and_short_files_are_truncated() {
        assert!(matches!(parse_idx_images(&[]), Err(Error::Truncated { .. })));
        assert!(matches!(parse_idx_labels(&[]), Err(Error::Truncated { .. })));
        let short = images_file(2, 2, 2, &[0; 7]);
        assert!(matches!(parse_idx_images(&short), Err(Error::Truncated { .. })));
    }

    #[test]
    fn count_mismatch_between_files() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        std::fs::write(&ip, images_file(2, 1, 1, &[0, 0])).unwrap();
        std::fs::write(&lp, labels_file(LABELS_MAGIC, &[0, 1, 1])).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::CountMismatch { images: 2, labels: 3 })));
    }
}

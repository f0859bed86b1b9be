//! Saliency grids as binary PGM (P5) images.

use std::path::Path;

use super::config::SaliencyScale;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            what: "PGM".into(),
            reason: reason.into(),
        };
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("not a binary graymap"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (width, height, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if max != 255 {
            return Err(bad("only 8-bit graymaps are supported"));
        }
        let pixels = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?.to_vec();
        if pixels.len() != width * height {
            return Err(Error::Truncated {
                what: "PGM raster".into(),
                expected: width * height,
                found: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }
}

const SEPARATOR: u8 = 255;

/// Collapses a `[C, H, W]` image (channel mean) to one plane. Sequence
/// examples are `[T, F]` and are rejected.
fn plane(t: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    match *t.shape() {
        [c, h, w] if c > 0 => {
            let mut out = vec![0.0; h * w];
            for ch in t.data().chunks(h * w) {
                out.iter_mut().zip(ch).for_each(|(o, v)| *o += v / c as f64);
            }
            Ok((h, w, out))
        }
        _ => Err(Error::invalid(format!(
            "saliency grids need image-shaped inputs, got shape {:?}",
            t.shape()
        ))),
    }
}

fn scale_into(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|v| (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

fn range(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// One row per probe: the input followed by its `C` maps, each tile min-max
/// scaled to `[0, 255]`, with 1-pixel white separators between tiles.
pub fn saliency_grid(rows: &[(Tensor, Vec<Tensor>)], scale: SaliencyScale) -> Result<GrayImage> {
    let first = rows.first().ok_or_else(|| Error::invalid("saliency grid needs at least one probe"))?;
    let (h, w, _) = plane(&first.0)?;
    let cols = 1 + first.1.len();
    let mut planes: Vec<Vec<Vec<f64>>> = Vec::with_capacity(rows.len());
    for (input, maps) in rows {
        if maps.len() + 1 != cols {
            return Err(Error::invalid("every probe needs the same number of maps"));
        }
        let mut row = Vec::with_capacity(cols);
        for t in std::iter::once(input).chain(maps) {
            let (th, tw, p) = plane(t)?;
            if (th, tw) != (h, w) {
                return Err(Error::invalid("saliency tiles differ in size"));
            }
            row.push(p);
        }
        planes.push(row);
    }
    let global = range(&planes.iter().flat_map(|r| r[1..].iter().flatten().copied()).collect::<Vec<_>>());

    let width = cols * w + (cols - 1);
    let height = rows.len() * h + (rows.len() - 1);
    let mut pixels = vec![SEPARATOR; width * height];
    for (r, row) in planes.iter().enumerate() {
        for (c, p) in row.iter().enumerate() {
            let (lo, hi) = if c > 0 && scale == SaliencyScale::Global { global } else { range(p) };
            let tile = scale_into(p, lo, hi);
            for y in 0..h {
                let dst = (r * (h + 1) + y) * width + c * (w + 1);
                pixels[dst..dst + w].copy_from_slice(&tile[y * w..(y + 1) * w]);
            }
        }
    }
    Ok(GrayImage { width, height, pixels })
}

/// Writes a one-probe grid for `x` and its per-class `maps`.
pub fn emit_saliency_grid(x: &Tensor, maps: &[Tensor], path: impl AsRef<Path>, scale: SaliencyScale) -> Result<()> {
    write_grid(&[(x.clone(), maps.to_vec())], path, scale)
}

pub fn write_grid(rows: &[(Tensor, Vec<Tensor>)], path: impl AsRef<Path>, scale: SaliencyScale) -> Result<()> {
    let path = path.as_ref();
    let img = saliency_grid(rows, scale)?;
    std::fs::write(path, img.to_pgm()).map_err(|e| Error::io(path, e))
}

use std::path::Path;

use super::header::HeaderReader;
use super::write_atomic;
use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};

/// A binary (P5) greymap. Samples are widened to `u16` regardless of depth.
#[derive(Debug, Clone, PartialEq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

/// One byte per sample when `maxval < 256`, otherwise two big-endian bytes.
pub fn encode_pgm(img: &PgmImage) -> Result<Vec<u8>> {
    if img.maxval == 0 {
        return Err(Error::format("PGM", "maxval must be positive"));
    }
    if img.data.len() != img.width * img.height {
        return Err(Error::shape("encode_pgm", "sample count differs from width x height"));
    }
    if let Some(v) = img.data.iter().find(|v| **v > img.maxval) {
        return Err(Error::Domain(format!("PGM sample {v} exceeds maxval {}", img.maxval)));
    }
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval < 256 {
        out.extend(img.data.iter().map(|v| *v as u8));
    } else {
        out.extend(img.data.iter().flat_map(|v| v.to_be_bytes()));
    }
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<PgmImage> {
    let mut h = HeaderReader::new(bytes, "PGM");
    let magic = h.token()?;
    if magic != "P5" {
        return Err(Error::format("PGM", format!("expected P5, found {magic:?}")));
    }
    let width: usize = h.number("width")?;
    let height: usize = h.number("height")?;
    let maxval: u32 = h.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format("PGM", format!("maxval {maxval} outside 1..=65535")));
    }
    let payload = h.payload()?;
    let bps = if maxval < 256 { 1 } else { 2 };
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::format("PGM", "dimensions overflow"))?;
    let expected = n * bps;
    if payload.len() < expected {
        return Err(Error::Truncated { format: "PGM", expected, found: payload.len() });
    }
    let data = if bps == 1 {
        payload[..n].iter().map(|b| u16::from(*b)).collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok(PgmImage { width, height, maxval: maxval as u16, data })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<PgmImage> {
    decode_pgm(&std::fs::read(path)?)
}

/// Masks are stored as 0 / 255.
pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let img = PgmImage {
        width: mask.width(),
        height: mask.height(),
        maxval: 255,
        data: mask.as_slice().iter().map(|m| if *m { 255 } else { 0 }).collect(),
    };
    write_atomic(path, &encode_pgm(&img)?)
}

/// Any nonzero sample is set.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let img = read_pgm(path)?;
    Grid::from_vec(img.width, img.height, img.data.iter().map(|v| *v != 0).collect())
}

/// Labels are stored as 16-bit samples; ids above 65535 are refused.
pub fn write_labels(path: impl AsRef<Path>, labels: &Grid<u32>) -> Result<()> {
    let data = labels
        .as_slice()
        .iter()
        .map(|l| {
            u16::try_from(*l)
                .map_err(|_| Error::Domain(format!("label {l} does not fit a 16-bit PGM")))
        })
        .collect::<Result<Vec<u16>>>()?;
    let img = PgmImage { width: labels.width(), height: labels.height(), maxval: 65535, data };
    write_atomic(path, &encode_pgm(&img)?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Grid<u32>> {
    let img = read_pgm(path)?;
    Grid::from_vec(img.width, img.height, img.data.iter().map(|v| u32::from(*v)).collect())
}

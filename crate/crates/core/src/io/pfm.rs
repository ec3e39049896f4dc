use std::path::Path;

use nalgebra::Vector3;

use super::header::HeaderReader;
use super::write_atomic;
use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid, NormalMap};

/// A decoded PFM raster: rows top-down in memory, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    /// 1 (`Pf`) or 3 (`PF`).
    pub channels: usize,
    pub data: Vec<f32>,
}

impl PfmImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Unsupported(format!("PFM with {channels} channels")));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape(
                "PfmImage",
                format!("{} samples for {width}x{height}x{channels}", data.len()),
            ));
        }
        Ok(PfmImage { width, height, channels, data })
    }

    /// Single-channel image; values are narrowed to `f32`.
    pub fn from_grid(grid: &Grid<f64>) -> Self {
        PfmImage {
            width: grid.width(),
            height: grid.height(),
            channels: 1,
            data: grid.as_slice().iter().map(|v| *v as f32).collect(),
        }
    }

    pub fn from_vectors(grid: &Grid<Vector3<f64>>) -> Self {
        PfmImage {
            width: grid.width(),
            height: grid.height(),
            channels: 3,
            data: grid.as_slice().iter().flat_map(|v| v.iter().map(|c| *c as f32)).collect(),
        }
    }

    pub fn to_grid(&self) -> Result<Grid<f64>> {
        if self.channels != 1 {
            return Err(Error::Unsupported("expected a single-channel PFM".into()));
        }
        Grid::from_vec(self.width, self.height, self.data.iter().map(|v| f64::from(*v)).collect())
    }

    pub fn to_vectors(&self) -> Result<Grid<Vector3<f64>>> {
        if self.channels != 3 {
            return Err(Error::Unsupported("expected a three-channel PFM".into()));
        }
        let v = self
            .data
            .chunks_exact(3)
            .map(|c| Vector3::new(f64::from(c[0]), f64::from(c[1]), f64::from(c[2])))
            .collect();
        Grid::from_vec(self.width, self.height, v)
    }
}

/// Serializes with rows bottom-up; `little_endian` selects the sign of the
/// scale field (negative means little-endian).
pub fn encode_pfm(img: &PfmImage, little_endian: bool) -> Vec<u8> {
    let tag = if img.channels == 3 { "PF" } else { "Pf" };
    let scale = if little_endian { "-1.0" } else { "1.0" };
    let mut out = format!("{tag}\n{} {}\n{scale}\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    out.reserve(img.data.len() * 4);
    for y in (0..img.height).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            let b = if little_endian { v.to_le_bytes() } else { v.to_be_bytes() };
            out.extend_from_slice(&b);
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<PfmImage> {
    let mut h = HeaderReader::new(bytes, "PFM");
    let channels = match h.token()? {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(Error::format("PFM", format!("unknown magic {t:?}"))),
    };
    let width: usize = h.number("width")?;
    let height: usize = h.number("height")?;
    let scale: f64 = h.number("scale")?;
    if width == 0 || height == 0 {
        return Err(Error::format("PFM", "zero image dimension"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format("PFM", format!("scale must be nonzero, got {scale}")));
    }
    let little = scale < 0.0;
    let payload = h.payload()?;
    let row = width
        .checked_mul(channels)
        .ok_or_else(|| Error::format("PFM", "dimensions overflow"))?;
    let expected = row
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format("PFM", "dimensions overflow"))?;
    if payload.len() < expected {
        return Err(Error::Truncated { format: "PFM", expected, found: payload.len() });
    }
    let mut data = vec![0f32; row * height];
    for (i, chunk) in payload[..expected].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (file_row, col) = (i / row, i % row);
        data[(height - 1 - file_row) * row + col] = v;
    }
    Ok(PfmImage { width, height, channels, data })
}

pub fn write_pfm(path: impl AsRef<Path>, img: &PfmImage) -> Result<()> {
    write_atomic(path, &encode_pfm(img, true))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<PfmImage> {
    decode_pfm(&std::fs::read(path)?)
}

pub fn write_scalar_map(path: impl AsRef<Path>, grid: &Grid<f64>) -> Result<()> {
    write_pfm(path, &PfmImage::from_grid(grid))
}

pub fn read_scalar_map(path: impl AsRef<Path>) -> Result<Grid<f64>> {
    read_pfm(path)?.to_grid()
}

/// Invalid pixels are stored as 0, which reads back as invalid.
pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    let (w, h) = depth.dims();
    let g = Grid::from_fn(w, h, |x, y| depth.at(x, y).copied().unwrap_or(0.0));
    write_scalar_map(path, &g)
}

/// Positive finite samples are valid.
pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    Ok(DepthMap::from_positive(read_scalar_map(path)?))
}

/// Invalid normals are stored as the zero vector.
pub fn write_normals(path: impl AsRef<Path>, normals: &NormalMap) -> Result<()> {
    let (w, h) = normals.dims();
    let g = Grid::from_fn(w, h, |x, y| normals.at(x, y).copied().unwrap_or_else(Vector3::zeros));
    write_pfm(path, &PfmImage::from_vectors(&g))
}

/// Normals are re-normalized after the `f32` round trip; zero vectors are invalid.
pub fn read_normals(path: impl AsRef<Path>) -> Result<NormalMap> {
    Ok(NormalMap::from_raw_normals(read_pfm(path)?.to_vectors()?))
}

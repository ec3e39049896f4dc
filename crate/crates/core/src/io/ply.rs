use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::write_atomic;
use crate::camera::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Vertex-only PLY: `float x y z`, plus `uchar red green blue` when the cloud
/// carries colors. Coordinates are narrowed to `f32`.
pub fn encode_ply(cloud: &PointCloud, format: PlyFormat) -> Result<Vec<u8>> {
    if let Some(c) = &cloud.colors {
        if c.len() != cloud.points.len() {
            return Err(Error::shape("encode_ply", "color count differs from point count"));
        }
    }
    if cloud.points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::NonFinite("encode_ply"));
    }
    let tag = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut header = format!("ply\nformat {tag} 1.0\nelement vertex {}\n", cloud.points.len());
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    match format {
        PlyFormat::Ascii => {
            let mut body = String::new();
            for (i, p) in cloud.points.iter().enumerate() {
                let _ = write!(body, "{} {} {}", p.x as f32, p.y as f32, p.z as f32);
                if let Some(c) = &cloud.colors {
                    let _ = write!(body, " {} {} {}", c[i][0], c[i][1], c[i][2]);
                }
                body.push('\n');
            }
            out.extend_from_slice(body.as_bytes());
        }
        PlyFormat::BinaryLittleEndian => {
            for (i, p) in cloud.points.iter().enumerate() {
                for c in p.iter() {
                    out.extend_from_slice(&(*c as f32).to_le_bytes());
                }
                if let Some(c) = &cloud.colors {
                    out.extend_from_slice(&c[i]);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, PartialEq)]
enum Scalar {
    U8,
    F32,
    F64,
}

impl Scalar {
    fn parse(t: &str) -> Option<Self> {
        match t {
            "uchar" | "uint8" => Some(Scalar::U8),
            "float" | "float32" => Some(Scalar::F32),
            "double" | "float64" => Some(Scalar::F64),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            Scalar::U8 => 1,
            Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

/// Reads vertex clouds as produced by [`encode_ply`]; `double` coordinates
/// are accepted too. Other elements or property kinds are refused.
pub fn decode_ply(bytes: &[u8]) -> Result<PointCloud> {
    let end = find(bytes, b"end_header")
        .ok_or_else(|| Error::format("PLY", "missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::format("PLY", "header is not ASCII"))?;
    let mut body = &bytes[end + b"end_header".len()..];
    body = match body {
        [b'\r', b'\n', rest @ ..] | [b'\n', rest @ ..] => rest,
        _ => return Err(Error::format("PLY", "end_header not followed by a newline")),
    };

    let mut lines = header.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("ply") {
        return Err(Error::format("PLY", "missing ply magic"));
    }
    let mut format = None;
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(Error::Unsupported(format!("PLY format {other}"))),
                })
            }
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| {
                    Error::format("PLY", format!("bad vertex count {n:?}"))
                })?)
            }
            ["element", other, ..] => {
                return Err(Error::Unsupported(format!("PLY element {other}")));
            }
            ["property", ty, name] => {
                let s = Scalar::parse(ty)
                    .ok_or_else(|| Error::Unsupported(format!("PLY property type {ty}")))?;
                props.push((name.to_string(), s));
            }
            _ => return Err(Error::format("PLY", format!("unexpected header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| Error::format("PLY", "missing format line"))?;
    let count = count.ok_or_else(|| Error::format("PLY", "missing vertex element"))?;
    let slot = |name: &str| props.iter().position(|(n, _)| n == name);
    let xyz = match (slot("x"), slot("y"), slot("z")) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => return Err(Error::format("PLY", "vertex lacks x/y/z")),
    };
    let rgb = match (slot("red"), slot("green"), slot("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        (None, None, None) => None,
        _ => return Err(Error::format("PLY", "partial color properties")),
    };
    if xyz.iter().any(|i| props[*i].1 == Scalar::U8) || rgb.is_some_and(|c| c.iter().any(|i| props[*i].1 != Scalar::U8)) {
        return Err(Error::Unsupported("PLY property types other than float xyz / uchar rgb".into()));
    }

    let mut values = vec![0.0f64; props.len()];
    let mut cloud = PointCloud {
        points: Vec::with_capacity(count),
        colors: rgb.map(|_| Vec::with_capacity(count)),
    };
    let push = |values: &[f64], cloud: &mut PointCloud| {
        cloud.points.push(Vector3::new(values[xyz[0]], values[xyz[1]], values[xyz[2]]));
        if let (Some(c), Some(idx)) = (cloud.colors.as_mut(), rgb) {
            c.push(idx.map(|i| values[i] as u8));
        }
    };
    match format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| Error::format("PLY", "ascii body is not text"))?;
            let mut rows = text.lines().filter(|l| !l.trim().is_empty());
            for i in 0..count {
                let row = rows.next().ok_or_else(|| {
                    Error::format("PLY", format!("expected {count} vertices, found {i}"))
                })?;
                let tok: Vec<&str> = row.split_whitespace().collect();
                if tok.len() != props.len() {
                    return Err(Error::format("PLY", format!("vertex {i} has {} fields", tok.len())));
                }
                for ((v, t), (_, s)) in values.iter_mut().zip(tok).zip(&props) {
                    *v = match s {
                        Scalar::U8 => t.parse::<u8>().map(f64::from).ok(),
                        Scalar::F32 => t.parse::<f32>().map(f64::from).ok(),
                        Scalar::F64 => t.parse::<f64>().ok(),
                    }
                    .ok_or_else(|| Error::format("PLY", format!("bad value {t:?} in vertex {i}")))?;
                }
                push(&values, &mut cloud);
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let stride: usize = props.iter().map(|(_, s)| s.size()).sum();
            let expected = stride * count;
            if body.len() < expected {
                return Err(Error::Truncated { format: "PLY", expected, found: body.len() });
            }
            for rec in body[..expected].chunks_exact(stride) {
                let mut off = 0;
                for (v, (_, s)) in values.iter_mut().zip(&props) {
                    let b = &rec[off..off + s.size()];
                    *v = match s {
                        Scalar::U8 => f64::from(b[0]),
                        Scalar::F32 => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
                        Scalar::F64 => f64::from_le_bytes(b.try_into().expect("8 bytes")),
                    };
                    off += s.size();
                }
                push(&values, &mut cloud);
            }
        }
    }
    Ok(cloud)
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    write_atomic(path, &encode_ply(cloud, format)?)
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    decode_ply(&std::fs::read(path)?)
}

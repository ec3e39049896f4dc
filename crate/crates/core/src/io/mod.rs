//! Readers and writers for on-disk artifacts: float maps (PFM), masks and
//! labels (PGM), point clouds (PLY), weight containers, and small text
//! sidecars. Every writer goes through [`write_atomic`].

mod header;
mod pfm;
mod pgm;
mod ply;
mod text;
mod weights;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub use pfm::{
    decode_pfm, encode_pfm, read_depth, read_normals, read_pfm, read_scalar_map, write_depth,
    write_normals, write_pfm, write_scalar_map, PfmImage,
};
pub use pgm::{
    decode_pgm, encode_pgm, read_labels, read_mask, read_pgm, write_labels, write_mask, PgmImage,
};
pub use ply::{decode_ply, encode_ply, read_ply, write_ply, PlyFormat};
pub use text::{
    format_intrinsics, parse_intrinsics, read_intrinsics, read_metric_report, write_intrinsics,
    write_metric_report,
};
pub use weights::{
    decode_weights, encode_weights, read_weights, write_weights, NamedTensor, WEIGHTS_MAGIC,
    WEIGHTS_VERSION,
};

/// Writes `bytes` to a temporary sibling of `path` and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

use std::path::Path;

use super::write_atomic;
use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;

/// One value per line: fx, fy, cx, cy.
pub fn format_intrinsics(k: &Intrinsics) -> String {
    format!("{}\n{}\n{}\n{}\n", k.fx, k.fy, k.cx, k.cy)
}

/// Accepts exactly four numbers separated by any whitespace; `#` starts a comment.
pub fn parse_intrinsics(text: &str) -> Result<Intrinsics> {
    let values = text
        .lines()
        .flat_map(|l| l.split('#').next().unwrap_or("").split_whitespace())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::format("intrinsics", format!("not a number: {t:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    match values.as_slice() {
        [fx, fy, cx, cy] => Intrinsics::new(*fx, *fy, *cx, *cy),
        v => Err(Error::format("intrinsics", format!("expected 4 values (fx fy cx cy), found {}", v.len()))),
    }
}

pub fn write_intrinsics(path: impl AsRef<Path>, k: &Intrinsics) -> Result<()> {
    write_atomic(path, format_intrinsics(k).as_bytes())
}

pub fn read_intrinsics(path: impl AsRef<Path>) -> Result<Intrinsics> {
    parse_intrinsics(&std::fs::read_to_string(path)?)
}

pub fn write_metric_report(path: impl AsRef<Path>, report: &MetricReport) -> Result<()> {
    write_atomic(path, report.to_key_value().as_bytes())
}

pub fn read_metric_report(path: impl AsRef<Path>) -> Result<MetricReport> {
    MetricReport::from_key_value(&std::fs::read_to_string(path)?)
}

//! Standard depth-evaluation metrics over a capped depth range.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid, Mask};
use crate::kv;

/// Depth range `(min, max]` of ground truth taken into account.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cap {
    pub min: f64,
    pub max: f64,
}

impl Cap {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min < max) || min.is_nan() {
            return Err(Error::Domain(format!("depth cap needs min < max, got ({min}, {max}]")));
        }
        Ok(Cap { min, max })
    }

    /// `(0, 80]`, the usual outdoor cap.
    pub fn outdoor() -> Self {
        Cap { min: 0.0, max: 80.0 }
    }

    pub fn contains(&self, d: f64) -> bool {
        d > self.min && d <= self.max
    }
}

impl Default for Cap {
    fn default() -> Self {
        Cap { min: 0.0, max: f64::INFINITY }
    }
}

/// Form of the squared relative error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SqRelStyle {
    /// `mean((p - g)^2 / g)`.
    #[default]
    Standard,
    /// `100 * mean(((p - g) / g)^2)`, as reported by the online benchmark.
    Benchmark,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub silog_eval: f64,
    /// Inverse-depth RMSE in 1/km.
    pub irmse: f64,
    pub n_valid: usize,
}

/// Column order of the key=value and CSV outputs.
pub const METRIC_KEYS: [&str; 11] = [
    "abs_rel", "sq_rel", "rmse", "rmse_log", "log10", "delta1", "delta2", "delta3", "silog_eval",
    "irmse", "n_valid",
];

impl MetricReport {
    /// The report of a perfect prediction over `n` pixels.
    pub fn perfect(n_valid: usize) -> Self {
        MetricReport {
            abs_rel: 0.0,
            sq_rel: 0.0,
            rmse: 0.0,
            rmse_log: 0.0,
            log10: 0.0,
            delta1: 1.0,
            delta2: 1.0,
            delta3: 1.0,
            silog_eval: 0.0,
            irmse: 0.0,
            n_valid,
        }
    }

    pub fn floats(&self) -> [f64; 10] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.log10,
            self.delta1,
            self.delta2,
            self.delta3,
            self.silog_eval,
            self.irmse,
        ]
    }

    fn from_floats(v: [f64; 10], n_valid: usize) -> Self {
        MetricReport {
            abs_rel: v[0],
            sq_rel: v[1],
            rmse: v[2],
            rmse_log: v[3],
            log10: v[4],
            delta1: v[5],
            delta2: v[6],
            delta3: v[7],
            silog_eval: v[8],
            irmse: v[9],
            n_valid,
        }
    }

    /// One `key=value` line per metric. Floats print in shortest
    /// round-trip form.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for (k, v) in METRIC_KEYS.iter().zip(self.floats()) {
            let _ = writeln!(out, "{k}={v}");
        }
        let _ = writeln!(out, "n_valid={}", self.n_valid);
        out
    }

    pub fn from_key_value(text: &str) -> Result<Self> {
        let entries = kv::parse(text)?;
        let find = |key: &str| {
            entries
                .iter()
                .rev()
                .find(|e| e.key == key)
                .ok_or_else(|| Error::format("metric report", format!("missing `{key}`")))
        };
        let mut floats = [0.0; 10];
        for (slot, key) in floats.iter_mut().zip(METRIC_KEYS) {
            *slot = find(key)?.parse()?;
        }
        Ok(Self::from_floats(floats, find("n_valid")?.parse()?))
    }

    pub fn csv_header() -> String {
        METRIC_KEYS.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        let mut cols: Vec<String> = self.floats().iter().map(f64::to_string).collect();
        cols.push(self.n_valid.to_string());
        cols.join(",")
    }
}

/// Valid ground-truth pixels inside the cap.
pub fn cap_mask(gt: &DepthMap, cap: Cap) -> Mask {
    let (w, h) = gt.dims();
    Grid::from_fn(w, h, |x, y| gt.at(x, y).is_some_and(|d| *d > 0.0 && cap.contains(*d)))
}

pub fn evaluate(pred: &DepthMap, gt: &DepthMap, cap: Cap) -> Result<MetricReport> {
    evaluate_with(pred, gt, cap, SqRelStyle::Standard)
}

/// Metrics over pixels where the ground truth lies in the cap and both maps
/// are valid. Thresholds use strict `<`.
pub fn evaluate_with(pred: &DepthMap, gt: &DepthMap, cap: Cap, style: SqRelStyle) -> Result<MetricReport> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape("evaluate", format!("{:?} vs {:?}", pred.dims(), gt.dims())));
    }
    Cap::new(cap.min, cap.max)?;
    let mask = cap_mask(gt, cap);
    let mut n = 0usize;
    let mut acc = [0.0f64; 10];
    let (mut sum_g, mut sum_g2) = (0.0, 0.0);
    for ((i, m), p) in mask.as_slice().iter().enumerate().zip(pred.values.as_slice()) {
        if !*m || !pred.valid.as_slice()[i] {
            continue;
        }
        let g = gt.values.as_slice()[i];
        let p = *p;
        let diff = p - g;
        let lg = p.ln() - g.ln();
        let ratio = (p / g).max(g / p);
        n += 1;
        acc[0] += diff.abs() / g;
        acc[1] += match style {
            SqRelStyle::Standard => diff * diff / g,
            SqRelStyle::Benchmark => (diff / g) * (diff / g),
        };
        acc[2] += diff * diff;
        acc[3] += lg * lg;
        acc[4] += (p.log10() - g.log10()).abs();
        acc[5] += f64::from(u8::from(ratio < 1.25));
        acc[6] += f64::from(u8::from(ratio < 1.25f64.powi(2)));
        acc[7] += f64::from(u8::from(ratio < 1.25f64.powi(3)));
        let inv = 1000.0 / p - 1000.0 / g;
        acc[9] += inv * inv;
        sum_g += lg;
        sum_g2 += lg * lg;
    }
    if n == 0 {
        return Err(Error::Empty("evaluate"));
    }
    let nf = n as f64;
    let mean = |s: f64| s / nf;
    let silog = (mean(sum_g2) - mean(sum_g).powi(2)).max(0.0).sqrt() * 100.0;
    let sq_scale = if style == SqRelStyle::Benchmark { 100.0 } else { 1.0 };
    Ok(MetricReport {
        abs_rel: mean(acc[0]),
        sq_rel: sq_scale * mean(acc[1]),
        rmse: mean(acc[2]).sqrt(),
        rmse_log: mean(acc[3]).sqrt(),
        log10: mean(acc[4]),
        delta1: mean(acc[5]),
        delta2: mean(acc[6]),
        delta3: mean(acc[7]),
        silog_eval: silog,
        irmse: mean(acc[9]).sqrt(),
        n_valid: n,
    })
}

//! Training objectives as differentiable scalars on a [`Tape`]: scaled SILog
//! depth loss and its iteration-weighted sum, negative-cosine normal loss,
//! L1 distance loss, uncertainty targets and loss, the complementary map, the
//! plane-aware consistency loss, and the weighted overall loss.

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid, Mask, NormalMap, ValidMap};
use crate::segmentation::PlaneMask;
use crate::tensor::{Shape, Tape, Tensor, Var};

/// Weights and constants of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Depth, normal, distance, uncertainty and plane-consistency weights.
    pub lambda: [f64; 5],
    pub kappa: f64,
    pub eta: f64,
    pub gamma: f64,
    pub m_steps: usize,
    /// Error tolerance `b` of the uncertainty target, in meters.
    pub b_tolerance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: [1.0, 5.0, 0.25, 1.0, 0.01],
            kappa: 10.0,
            eta: 0.85,
            gamma: 0.85,
            m_steps: 3,
            b_tolerance: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let positive = self.lambda.iter().all(|l| *l > 0.0 && l.is_finite())
            && self.kappa > 0.0
            && self.b_tolerance > 0.0;
        if !positive {
            return Err(Error::Config("loss weights, kappa and b must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Config(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.m_steps == 0 {
            return Err(Error::Config("m_steps must be at least 1".into()));
        }
        Ok(())
    }

    /// `sum_i lambda_i * terms_i` on plain numbers.
    pub fn combine(&self, terms: [f64; 5]) -> f64 {
        self.lambda.iter().zip(terms).map(|(l, t)| l * t).sum()
    }

    /// Weight `gamma^(m - s)` of iterate `s` in `1..=m`.
    pub fn step_weight(&self, s: usize) -> f64 {
        self.gamma.powi((self.m_steps - s) as i32)
    }
}

/// How per-pixel terms are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    Sum,
    /// Sum divided by the number of counted pixels (or pixel pairs).
    #[default]
    Mean,
}

fn check_plane(op: &'static str, tape: &Tape, v: Var, channels: usize, dims: (usize, usize)) -> Result<()> {
    let s = tape.shape(v);
    if s != Shape::new(channels, dims.1, dims.0) {
        return Err(Error::shape(
            op,
            format!("tensor {s} vs {channels} channel(s) of {}x{}", dims.1, dims.0),
        ));
    }
    Ok(())
}

fn counted_pixels(valid: &Mask, extra: &Mask) -> Vec<u32> {
    valid
        .as_slice()
        .iter()
        .zip(extra.as_slice())
        .enumerate()
        .filter(|(_, (a, b))| **a && **b)
        .map(|(i, _)| i as u32)
        .collect()
}

fn reduce(tape: &mut Tape, total: Var, count: usize, reduction: Reduction) -> Result<Var> {
    match reduction {
        Reduction::Sum => Ok(total),
        Reduction::Mean => tape.scale(total, 1.0 / count.max(1) as f64),
    }
}

/// `kappa * sqrt(mean(g^2) - eta * mean(g)^2)` with `g = ln pred - ln gt` over
/// pixels valid in both `valid` and `gt`.
///
/// Where the radicand is exactly zero the gradient is taken as zero.
pub fn silog_loss(
    tape: &mut Tape,
    pred: Var,
    gt: &DepthMap,
    valid: &Mask,
    kappa: f64,
    eta: f64,
) -> Result<Var> {
    check_plane("silog_loss", tape, pred, 1, gt.dims())?;
    let pixels = counted_pixels(valid, &gt.valid);
    if pixels.is_empty() {
        return Err(Error::Empty("silog_loss"));
    }
    let pv = tape.value(pred).data();
    if let Some(p) = pixels.iter().find(|p| !(pv[**p as usize] > 0.0)) {
        return Err(Error::Domain(format!(
            "predicted depth {} at pixel {p} is not positive",
            pv[*p as usize]
        )));
    }
    let n = pixels.len() as f64;
    let log_gt: Vec<f64> = pixels
        .iter()
        .map(|p| gt.values.as_slice()[*p as usize].ln())
        .collect();
    let log_gt = tape.constant(Tensor::from_vec(Shape::new(1, 1, pixels.len()), log_gt)?);
    let picked = tape.gather(pred, &pixels)?;
    let log_pred = tape.log(picked)?;
    let g = tape.sub(log_pred, log_gt)?;
    let g2 = tape.mul(g, g)?;
    let sum_g2 = tape.sum(g2)?;
    let mean_g2 = tape.scale(sum_g2, 1.0 / n)?;
    let sum_g = tape.sum(g)?;
    let mean_g = tape.scale(sum_g, 1.0 / n)?;
    let mean_g_sq = tape.mul(mean_g, mean_g)?;
    let penalty = tape.scale(mean_g_sq, eta)?;
    let radicand = tape.sub(mean_g2, penalty)?;
    // rounding can push an exact zero slightly negative
    let radicand = tape.clamp_min(radicand, 0.0)?;
    let root = tape.sqrt(radicand)?;
    tape.scale(root, kappa)
}

/// `sum_{s=1..m} gamma^(m-s) * (silog(first[s]) + silog(second[s]))`.
pub fn multiscale_depth_loss(
    tape: &mut Tape,
    first: &[Var],
    second: &[Var],
    gt: &DepthMap,
    valid: &Mask,
    w: &LossWeights,
) -> Result<Var> {
    if first.len() != second.len() || first.len() != w.m_steps {
        return Err(Error::shape(
            "multiscale_depth_loss",
            format!(
                "{} and {} iterates for m = {}",
                first.len(),
                second.len(),
                w.m_steps
            ),
        ));
    }
    let mut total: Option<Var> = None;
    for (s, (a, b)) in first.iter().zip(second).enumerate() {
        let la = silog_loss(tape, *a, gt, valid, w.kappa, w.eta)?;
        let lb = silog_loss(tape, *b, gt, valid, w.kappa, w.eta)?;
        let both = tape.add(la, lb)?;
        let weighted = tape.scale(both, w.step_weight(s + 1))?;
        total = Some(match total {
            Some(t) => tape.add(t, weighted)?,
            None => weighted,
        });
    }
    Ok(total.expect("m_steps >= 1"))
}

/// Per-pixel `1 - <pred, gt>` over valid pixels. `pred` must already be unit
/// length (see [`Tape::normalize_channels`]).
pub fn normal_cosine_loss(
    tape: &mut Tape,
    pred: Var,
    gt: &NormalMap,
    valid: &Mask,
    reduction: Reduction,
) -> Result<Var> {
    check_plane("normal_cosine_loss", tape, pred, 3, gt.dims())?;
    let pixels = counted_pixels(valid, &gt.valid);
    let n = pixels.len();
    let mut target = vec![0.0; 3 * n];
    for (k, p) in pixels.iter().enumerate() {
        let v = gt.values.as_slice()[*p as usize];
        for c in 0..3 {
            target[c * n + k] = v[c];
        }
    }
    let target = tape.constant(Tensor::from_vec(Shape::new(3, 1, n), target)?);
    let picked = tape.gather(pred, &pixels)?;
    let dots = tape.mul(picked, target)?;
    let dot_sum = tape.sum(dots)?;
    let neg = tape.scale(dot_sum, -1.0)?;
    let total = tape.add_scalar(neg, n as f64)?;
    reduce(tape, total, n, reduction)
}

fn l1_to_constant(
    tape: &mut Tape,
    pred: Var,
    target: &Grid<f64>,
    pixels: &[u32],
) -> Result<Var> {
    let t: Vec<f64> = pixels.iter().map(|p| target.as_slice()[*p as usize]).collect();
    let t = tape.constant(Tensor::from_vec(Shape::new(1, 1, pixels.len()), t)?);
    let picked = tape.gather(pred, pixels)?;
    let diff = tape.sub(picked, t)?;
    let abs = tape.abs(diff)?;
    tape.sum(abs)
}

/// `|pred - gt|` over valid pixels; the subgradient at equality is zero.
pub fn distance_l1_loss(
    tape: &mut Tape,
    pred: Var,
    gt: &ValidMap<f64>,
    valid: &Mask,
    reduction: Reduction,
) -> Result<Var> {
    check_plane("distance_l1_loss", tape, pred, 1, gt.dims())?;
    let pixels = counted_pixels(valid, &gt.valid);
    let total = l1_to_constant(tape, pred, &gt.values, &pixels)?;
    reduce(tape, total, pixels.len(), reduction)
}

/// `1 - exp(-|pred - gt| / b)` per pixel; zero where either depth is invalid.
pub fn uncertainty_target(pred: &DepthMap, gt: &DepthMap, b: f64) -> Result<Grid<f64>> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::Domain(format!("uncertainty tolerance must be positive, got {b}")));
    }
    if pred.dims() != gt.dims() {
        return Err(Error::shape(
            "uncertainty_target",
            format!("{:?} vs {:?}", pred.dims(), gt.dims()),
        ));
    }
    let (w, h) = pred.dims();
    Ok(Grid::from_fn(w, h, |x, y| match (pred.at(x, y), gt.at(x, y)) {
        (Some(p), Some(g)) => -(-(p - g).abs() / b).exp_m1(),
        _ => 0.0,
    }))
}

/// `|u1 - u1_gt| + |u2 - u2_gt|` over valid pixels.
pub fn uncertainty_loss(
    tape: &mut Tape,
    u1: Var,
    u2: Var,
    u1_gt: &Grid<f64>,
    u2_gt: &Grid<f64>,
    valid: &Mask,
    reduction: Reduction,
) -> Result<Var> {
    check_plane("uncertainty_loss", tape, u1, 1, valid.dims())?;
    check_plane("uncertainty_loss", tape, u2, 1, valid.dims())?;
    if !u1_gt.same_dims(valid) || !u2_gt.same_dims(valid) {
        return Err(Error::shape("uncertainty_loss", "target grids differ from mask"));
    }
    let pixels = counted_pixels(valid, valid);
    let a = l1_to_constant(tape, u1, u1_gt, &pixels)?;
    let b = l1_to_constant(tape, u2, u2_gt, &pixels)?;
    let total = tape.add(a, b)?;
    reduce(tape, total, pixels.len(), reduction)
}

/// `|d1 - d2|` where both depths are valid.
pub fn complementary_map(d1: &DepthMap, d2: &DepthMap) -> Result<ValidMap<f64>> {
    if d1.dims() != d2.dims() {
        return Err(Error::shape(
            "complementary_map",
            format!("{:?} vs {:?}", d1.dims(), d2.dims()),
        ));
    }
    let (w, h) = d1.dims();
    let valid = Grid::from_fn(w, h, |x, y| d1.is_valid(x, y) && d2.is_valid(x, y));
    let values = Grid::from_fn(w, h, |x, y| {
        if *valid.get(x, y) {
            (d1.values.get(x, y) - d2.values.get(x, y)).abs()
        } else {
            0.0
        }
    });
    ValidMap::new(values, valid)
}

/// Forward-difference pixel pairs (right and down neighbours) with both ends
/// inside the mask and inside the same segment.
pub fn plane_consistency_pairs(mask: &PlaneMask) -> Vec<(u32, u32)> {
    let (w, h) = mask.mask.dims();
    let m = mask.mask.as_slice();
    let l = mask.labels.as_slice();
    let mut pairs = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if !m[p] {
                continue;
            }
            for q in [(x + 1 < w).then_some(p + 1), (y + 1 < h).then_some(p + w)]
                .into_iter()
                .flatten()
            {
                if m[q] && l[q] == l[p] {
                    pairs.push((p as u32, q as u32));
                }
            }
        }
    }
    pairs
}

/// L1 norm of forward differences of every normal channel and the distance
/// inside planar regions. Pairs that cross the mask or a segment boundary are
/// not counted; `Mean` divides by the number of counted pairs.
pub fn plane_consistency_loss(
    tape: &mut Tape,
    normals: Var,
    distance: Var,
    mask: &PlaneMask,
    reduction: Reduction,
) -> Result<Var> {
    check_plane("plane_consistency_loss", tape, normals, 3, mask.mask.dims())?;
    check_plane("plane_consistency_loss", tape, distance, 1, mask.mask.dims())?;
    let pairs = plane_consistency_pairs(mask);
    let dn = tape.pair_diff(normals, &pairs)?;
    let dn = tape.abs(dn)?;
    let sn = tape.sum(dn)?;
    let dd = tape.pair_diff(distance, &pairs)?;
    let dd = tape.abs(dd)?;
    let sd = tape.sum(dd)?;
    let total = tape.add(sn, sd)?;
    reduce(tape, total, pairs.len(), reduction)
}

/// The five objective terms of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub depth: Var,
    pub normal: Var,
    pub distance: Var,
    pub uncertainty: Var,
    pub plane: Var,
}

impl LossTerms {
    pub fn vars(&self) -> [Var; 5] {
        [self.depth, self.normal, self.distance, self.uncertainty, self.plane]
    }

    pub fn values(&self, tape: &Tape) -> [f64; 5] {
        self.vars().map(|v| tape.value(v).item())
    }
}

/// `sum_i lambda_i * L_i` on the tape.
pub fn overall_loss(tape: &mut Tape, terms: &LossTerms, w: &LossWeights) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (v, l) in terms.vars().into_iter().zip(w.lambda) {
        let weighted = tape.scale(v, l)?;
        total = Some(match total {
            Some(t) => tape.add(t, weighted)?,
            None => weighted,
        });
    }
    Ok(total.expect("five terms"))
}

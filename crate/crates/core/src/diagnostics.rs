//! Named finite-difference checks of every differentiable component, shared
//! by the command line and the test suites.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid, NormalMap, ValidMap};
use crate::losses::{
    distance_l1_loss, normal_cosine_loss, plane_consistency_loss, silog_loss, uncertainty_loss,
    LossWeights, Reduction,
};
use crate::model::{forward, ContextEncoder, DemoModel, ModelConfig, Sample, Targets};
use crate::refinement::{
    build_input, conv_gru_step, depth_update_head, GruVars, RefinementConfig, RefinementInputs,
    RefinementWeights,
};
use crate::segmentation::{PlaneMask, SegmentationParams};
use crate::synthetic::SceneSpec;
use crate::tensor::{
    finite_diff_check_inputs, Activation, SepConvVars, SepConvWeights, Shape, Tape, Tensor,
    DEFAULT_EPS,
};

pub const COMPONENTS: [&str; 11] = [
    "silog",
    "cosine",
    "l1",
    "uncertainty",
    "plane_consistency",
    "conv2d_separable",
    "activation",
    "build_input",
    "conv_gru_step",
    "depth_update_head",
    "composition",
];

/// Relative error below which a component passes.
pub const DEFAULT_THRESHOLD: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub component: &'static str,
    pub seed: u64,
    pub max_rel_error: f64,
    pub passed: bool,
}

const H: usize = 6;
const W: usize = 6;

fn uniform(rng: &mut ChaCha8Rng, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::random_uniform(Shape::new(c, H, W), lo, hi, rng)
}

/// Values at least `gap` away from `target` on either side, so L1 kinks are
/// out of reach of the probe.
fn off_kink(rng: &mut ChaCha8Rng, target: &Tensor, gap: f64) -> Tensor {
    Tensor::from_fn(target.shape(), |c, y, x| {
        let d = rng.gen_range(gap..1.0);
        target.get(c, y, x) + if rng.gen_bool(0.5) { d } else { -d }
    })
}

fn check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[crate::tensor::Var]) -> Result<crate::tensor::Var>) -> Result<f64> {
    let errs = finite_diff_check_inputs(f, inputs, DEFAULT_EPS)?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

/// Maximum relative error of one component over all of its inputs.
pub fn check_component(name: &str, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = Grid::filled(W, H, true);
    match name {
        "silog" => {
            let gt = DepthMap::all_valid(uniform(&mut rng, 1, 0.5, 4.0).channel_grid(0));
            let pred = uniform(&mut rng, 1, 0.5, 4.0);
            check(&[pred], |t, v| silog_loss(t, v[0], &gt, &mask, 10.0, 0.85))
        }
        "cosine" => {
            let gt = NormalMap::from_raw_normals(Grid::from_fn(W, H, |_, _| {
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.3..1.0))
            }));
            let raw = uniform(&mut rng, 3, -1.0, 1.0);
            check(&[raw], |t, v| {
                let n = t.normalize_channels(v[0], 1e-12)?;
                normal_cosine_loss(t, n, &gt, &mask, Reduction::Mean)
            })
        }
        "l1" => {
            let target = uniform(&mut rng, 1, 0.5, 3.0);
            let gt = ValidMap::all_valid(target.channel_grid(0));
            let pred = off_kink(&mut rng, &target, 1e-3);
            check(&[pred], |t, v| distance_l1_loss(t, v[0], &gt, &mask, Reduction::Mean))
        }
        "uncertainty" => {
            let t1 = uniform(&mut rng, 1, 0.0, 1.0);
            let t2 = uniform(&mut rng, 1, 0.0, 1.0);
            let (g1, g2) = (t1.channel_grid(0), t2.channel_grid(0));
            let logit = |rng: &mut ChaCha8Rng, t: &Tensor| {
                let u = off_kink(rng, t, 1e-3);
                Tensor::from_fn(u.shape(), |c, y, x| {
                    let p = u.get(c, y, x).clamp(1e-3, 1.0 - 1e-3);
                    (p / (1.0 - p)).ln()
                })
            };
            let (a, b) = (logit(&mut rng, &t1), logit(&mut rng, &t2));
            check(&[a, b], |t, v| {
                let u1 = t.sigmoid(v[0])?;
                let u2 = t.sigmoid(v[1])?;
                uncertainty_loss(t, u1, u2, &g1, &g2, &mask, Reduction::Mean)
            })
        }
        "plane_consistency" => {
            let labels = Grid::from_fn(W, H, |x, y| u32::from(x + y >= W));
            let pm = PlaneMask { mask: Grid::filled(W, H, true), labels, retained: vec![0, 1] };
            let n = uniform(&mut rng, 3, -1.0, 1.0);
            let d = uniform(&mut rng, 1, 0.5, 3.0);
            check(&[n, d], |t, v| plane_consistency_loss(t, v[0], v[1], &pm, Reduction::Mean))
        }
        "conv2d_separable" => {
            let w = SepConvWeights::random(2, 3, 1.0, &mut rng);
            let bias = Tensor::random_uniform(w.bias.shape(), -0.5, 0.5, &mut rng);
            let x = uniform(&mut rng, 2, -1.0, 1.0);
            let target = uniform(&mut rng, 3, -1.0, 1.0);
            check(&[x, w.depthwise, w.pointwise, bias], |t, v| {
                let sep = SepConvVars { depthwise: v[1], pointwise: v[2], bias: v[3] };
                let y = t.conv2d_separable(v[0], &sep)?;
                let c = t.constant(target.clone());
                let p = t.mul(y, c)?;
                t.sum(p)
            })
        }
        "activation" => {
            let x = uniform(&mut rng, 2, -3.0, 3.0);
            let target = uniform(&mut rng, 2, -1.0, 1.0);
            check(&[x], |t, v| {
                let s = t.activation(v[0], Activation::Sigmoid)?;
                let h = t.activation(v[0], Activation::Tanh)?;
                let c = t.constant(target.clone());
                let sh = t.mul(s, h)?;
                let p = t.mul(sh, c)?;
                t.sum(p)
            })
        }
        "build_input" => {
            let cfg = RefinementConfig { proj_channels: 2, context_channels: 2, hidden_channels: 3, ..Default::default() };
            let w = RefinementWeights::random(&cfg, 3, seed)?;
            let mut maps = vec![
                uniform(&mut rng, 1, 1.0, 3.0),
                uniform(&mut rng, 1, 1.0, 3.0),
                uniform(&mut rng, 1, 0.0, 1.0),
                uniform(&mut rng, 1, 0.0, 1.0),
                uniform(&mut rng, 1, 0.0, 1.0),
                uniform(&mut rng, 2, -1.0, 1.0),
            ];
            maps.extend(w.proj1.tensors().into_iter().cloned());
            maps.extend(w.proj2.tensors().into_iter().cloned());
            let target = uniform(&mut rng, 4, -1.0, 1.0);
            check(&maps, |t, v| {
                let r = RefinementInputs { d1: v[0], d2: v[1], u1: v[2], u2: v[3], dif: v[4], context: v[5] };
                let p1 = SepConvVars { depthwise: v[6], pointwise: v[7], bias: v[8] };
                let p2 = SepConvVars { depthwise: v[9], pointwise: v[10], bias: v[11] };
                let i = build_input(t, &r, &p1, &p2)?;
                let c = t.constant(target.clone());
                let p = t.mul(i, c)?;
                t.sum(p)
            })
        }
        "conv_gru_step" => {
            let cfg = RefinementConfig { proj_channels: 2, context_channels: 2, hidden_channels: 3, ..Default::default() };
            let w = RefinementWeights::random(&cfg, 3, seed)?;
            let mut inputs = vec![uniform(&mut rng, 3, -0.9, 0.9), uniform(&mut rng, 4, -2.0, 2.0)];
            for g in [&w.gru.z, &w.gru.r, &w.gru.h] {
                inputs.push(g.depthwise.clone());
                inputs.push(g.pointwise.clone());
                inputs.push(Tensor::random_uniform(g.bias.shape(), -0.5, 0.5, &mut rng));
            }
            check(&inputs, |t, v| {
                let sep = |i: usize| SepConvVars { depthwise: v[i], pointwise: v[i + 1], bias: v[i + 2] };
                let g = GruVars { z: sep(2), r: sep(5), h: sep(8) };
                let h = conv_gru_step(t, v[0], v[1], &g)?;
                t.sum(h)
            })
        }
        "depth_update_head" => {
            let gt = DepthMap::all_valid(uniform(&mut rng, 1, 1.0, 3.0).channel_grid(0));
            let base = uniform(&mut rng, 1, 1.0, 3.0);
            let h1 = SepConvWeights::random(3, 1, 0.3, &mut rng);
            let h2 = SepConvWeights::random(3, 1, 0.3, &mut rng);
            let inputs = vec![
                uniform(&mut rng, 3, -0.9, 0.9),
                h1.depthwise,
                h1.pointwise,
                Tensor::full(h1.bias.shape(), 0.05),
                h2.depthwise,
                h2.pointwise,
                Tensor::full(h2.bias.shape(), -0.05),
            ];
            check(&inputs, |t, v| {
                let a = SepConvVars { depthwise: v[1], pointwise: v[2], bias: v[3] };
                let b = SepConvVars { depthwise: v[4], pointwise: v[5], bias: v[6] };
                let (da, db) = depth_update_head(t, v[0], &a, &b)?;
                let base = t.constant(base.clone());
                let d1 = t.add(base, da)?;
                let d2 = t.add(base, db)?;
                let l1 = silog_loss(t, d1, &gt, &mask, 10.0, 0.85)?;
                let l2 = silog_loss(t, d2, &gt, &mask, 10.0, 0.85)?;
                t.add(l1, l2)
            })
        }
        "composition" => composition(seed),
        other => Err(Error::Config(format!(
            "unknown gradcheck component `{other}` (known: {})",
            COMPONENTS.join(", ")
        ))),
    }
}

/// The whole model from heads through refinement to the overall loss, with
/// respect to every weight tensor. Detached targets are frozen first.
fn composition(seed: u64) -> Result<f64> {
    let cfg = ModelConfig {
        refinement: RefinementConfig {
            proj_channels: 2,
            context_channels: 2,
            hidden_channels: 4,
            t_max: 2,
            ..RefinementConfig::default()
        },
        pen_channels: 3,
        ..ModelConfig::default()
    };
    let weights = LossWeights { m_steps: 2, ..LossWeights::default() };
    let model = DemoModel::random(cfg, seed)?;
    let encoder = ContextEncoder::random(2, seed);
    let spec = SceneSpec::three_plane(16, 16);
    let sample = Sample::from_scene(&spec, &encoder, cfg.downscale, seed)?;
    let params = SegmentationParams { min_region_size: 2, ..SegmentationParams::default() };
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let frozen = forward(&mut tape, &model, &vars, &sample, &weights, Targets::Online(&params))?.targets;
    let inputs: Vec<Tensor> = model.named().into_iter().map(|(_, t)| t.clone()).collect();
    check(&inputs, |t, v| {
        let vars = model.vars_from(v)?;
        Ok(forward(t, &model, &vars, &sample, &weights, Targets::Frozen(&frozen))?.total)
    })
}

/// Runs the named components (all when empty) and marks each against `threshold`.
pub fn run_gradchecks(names: &[String], seed: u64, threshold: f64) -> Result<Vec<GradcheckRow>> {
    let selected: Vec<&'static str> = if names.is_empty() {
        COMPONENTS.to_vec()
    } else {
        names
            .iter()
            .map(|n| {
                COMPONENTS
                    .iter()
                    .find(|c| **c == n.as_str())
                    .copied()
                    .ok_or_else(|| Error::Config(format!(
                        "unknown gradcheck component `{n}` (known: {})",
                        COMPONENTS.join(", ")
                    )))
            })
            .collect::<Result<_>>()?
    };
    selected
        .into_iter()
        .map(|component| {
            let e = check_component(component, seed)?;
            Ok(GradcheckRow { component, seed, max_rel_error: e, passed: e < threshold })
        })
        .collect()
}

/// Fixed-width table, one row per component.
pub fn format_table(rows: &[GradcheckRow]) -> String {
    let mut s = format!("{:<20} {:>6} {:>14}  result\n", "component", "seed", "max_rel_error");
    for r in rows {
        s.push_str(&format!(
            "{:<20} {:>6} {:>14.3e}  {}\n",
            r.component,
            r.seed,
            r.max_rel_error,
            if r.passed { "PASS" } else { "FAIL" }
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_component_passes() {
        let rows = run_gradchecks(&[], 1, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(rows.len(), COMPONENTS.len());
        for r in &rows {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn unknown_component_is_a_config_error() {
        assert!(matches!(
            run_gradchecks(&["nope".to_string()], 0, 1e-5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn table_is_deterministic() {
        let names = vec!["silog".to_string(), "l1".to_string()];
        let a = format_table(&run_gradchecks(&names, 7, 1e-5).unwrap());
        let b = format_table(&run_gradchecks(&names, 7, 1e-5).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 3);
    }
}

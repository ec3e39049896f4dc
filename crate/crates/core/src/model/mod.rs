//! A small end-to-end model wiring every differentiable piece together: a
//! fixed random context encoder stands in for the image backbone, a
//! normal-distance head and a direct depth head produce the two initial depth
//! maps, and the refinement engine improves both. Used to check gradients of
//! the full composition and to verify the pipeline can fit a single scene.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::grid::{DepthMap, DistanceMap, Grid, Mask, NormalMap};
use crate::losses::{
    distance_l1_loss, multiscale_depth_loss, normal_cosine_loss, overall_loss,
    plane_consistency_loss, uncertainty_loss, uncertainty_target, LossTerms, LossWeights,
    Reduction,
};
use crate::refinement::{
    fuse_var, init_hidden, refine, RefinementConfig, RefinementTrace, RefinementVars,
    RefinementWeights,
};
use crate::segmentation::{detect_planes, PlaneMask, SegmentationParams};
use crate::synthetic::{generate, SceneSpec};
use crate::tensor::{bilinear_resize_tensor, SepConvVars, SepConvWeights, Shape, Tape, Tensor, Var};

/// Guard on `N . K^-1 p` before dividing in the depth-from-plane conversion.
pub const DEFAULT_DEN_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub refinement: RefinementConfig,
    /// Channels of each head's penultimate feature.
    pub pen_channels: usize,
    /// Ratio between the full and the working resolution.
    pub downscale: usize,
    pub den_floor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            refinement: RefinementConfig::default(),
            pen_channels: 16,
            downscale: 4,
            den_floor: DEFAULT_DEN_FLOOR,
        }
    }
}

/// Two separable convolutions with tanh over the downsampled RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEncoder {
    pub conv1: SepConvWeights,
    pub conv2: SepConvWeights,
}

impl ContextEncoder {
    pub fn random(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ContextEncoder {
            conv1: SepConvWeights::random(3, channels, 2.0, &mut rng),
            conv2: SepConvWeights::random(channels, channels, 2.0, &mut rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv2.out_channels()
    }

    pub fn encode(&self, rgb: &Grid<[f64; 3]>, out_h: usize, out_w: usize) -> Result<Tensor> {
        let s = Shape::new(3, rgb.height(), rgb.width());
        let image = Tensor::from_fn(s, |c, y, x| rgb.get(x, y)[c]);
        let small = bilinear_resize_tensor(&image, out_h, out_w);
        let mut tape = Tape::new();
        let x = tape.constant(small);
        let w1 = self.conv1.bind(&mut tape);
        let w2 = self.conv2.bind(&mut tape);
        let f = tape.conv2d_separable(x, &w1)?;
        let f = tape.tanh(f)?;
        let f = tape.conv2d_separable(f, &w2)?;
        let f = tape.tanh(f)?;
        Ok(tape.value(f).clone())
    }
}

/// Penultimate convolution (tanh) followed by an output convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub pen: SepConvWeights,
    pub out: SepConvWeights,
}

/// Learnable weights of the model; the context encoder is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoModel {
    pub config: ModelConfig,
    /// Outputs: 3 raw normal channels, log distance, uncertainty logit.
    pub nd_head: HeadWeights,
    /// Outputs: log depth, uncertainty logit.
    pub depth_head: HeadWeights,
    pub refinement: RefinementWeights,
}

#[derive(Debug, Clone, Copy)]
struct HeadVars {
    pen: SepConvVars,
    out: SepConvVars,
}

/// Handles of a [`DemoModel`] on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    nd_head: HeadVars,
    depth_head: HeadVars,
    pub refinement: RefinementVars,
}

impl DemoModel {
    /// Seeded initialization. Output biases start at a fronto-parallel plane
    /// two meters away.
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.refinement.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ctx, p) = (config.refinement.context_channels, config.pen_channels);
        let mut nd_head = HeadWeights {
            pen: SepConvWeights::random(ctx, p, 1.0, &mut rng),
            out: SepConvWeights::random(p, 5, 0.5, &mut rng),
        };
        let two = 2f64.ln();
        nd_head.out.bias = Tensor::from_vec(Shape::new(5, 1, 1), vec![0.0, 0.0, 1.0, two, 0.0])?;
        let mut depth_head = HeadWeights {
            pen: SepConvWeights::random(ctx, p, 1.0, &mut rng),
            out: SepConvWeights::random(p, 2, 0.5, &mut rng),
        };
        depth_head.out.bias = Tensor::from_vec(Shape::new(2, 1, 1), vec![two, 0.0])?;
        let refinement = RefinementWeights::random(&config.refinement, 2 * p, seed ^ 0x9e37_79b9)?;
        Ok(DemoModel { config, nd_head, depth_head, refinement })
    }

    fn head_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, h) in [("nd_head", &self.nd_head), ("depth_head", &self.depth_head)] {
            for (layer, w) in [("pen", &h.pen), ("out", &h.out)] {
                for (part, t) in ["depthwise", "pointwise", "bias"].iter().zip(w.tensors()) {
                    out.push((format!("{name}.{layer}.{part}"), t));
                }
            }
        }
        out
    }

    /// All learnable tensors with stable names; refinement tensors carry a
    /// `refine.` prefix.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.head_tensors();
        out.extend(self.refinement.named().into_iter().map(|(n, t)| (format!("refine.{n}"), t)));
        out
    }

    /// Mutable tensors in [`named`](Self::named) order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for h in [&mut self.nd_head, &mut self.depth_head] {
            out.extend(h.pen.tensors_mut());
            out.extend(h.out.tensors_mut());
        }
        out.extend(self.refinement.tensors_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.shape().numel()).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        let vars: Vec<Var> = self.named().into_iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        self.vars_from(&vars).expect("own tensors")
    }

    /// Structures leaves created from [`named`](Self::named), in that order.
    pub fn vars_from(&self, v: &[Var]) -> Result<ModelVars> {
        if v.len() < 12 {
            return Err(Error::shape("DemoModel::vars_from", "too few handles"));
        }
        let sep = |i: usize| SepConvVars { depthwise: v[3 * i], pointwise: v[3 * i + 1], bias: v[3 * i + 2] };
        Ok(ModelVars {
            nd_head: HeadVars { pen: sep(0), out: sep(1) },
            depth_head: HeadVars { pen: sep(2), out: sep(3) },
            refinement: RefinementVars::from_vars(&v[12..], self.refinement.init.is_some())?,
        })
    }
}

/// Ground truth and fixed inputs for one scene.
#[derive(Debug, Clone)]
pub struct Sample {
    pub full_width: usize,
    pub full_height: usize,
    pub depth_full: DepthMap,
    /// Working-resolution ground truth.
    pub depth: DepthMap,
    pub normal: NormalMap,
    pub distance: DistanceMap,
    pub intrinsics: Intrinsics,
    /// Viewing rays at working resolution, `3 x h x w`.
    pub rays: Tensor,
    pub context: Tensor,
}

impl Sample {
    /// Renders `spec` at full and working resolution. Both sizes must be
    /// divisible by `downscale`.
    pub fn from_scene(spec: &SceneSpec, encoder: &ContextEncoder, downscale: usize, seed: u64) -> Result<Self> {
        if downscale == 0 || spec.width % downscale != 0 || spec.height % downscale != 0 {
            return Err(Error::Domain(format!(
                "{}x{} is not divisible by {downscale}",
                spec.width, spec.height
            )));
        }
        let full = generate(spec, seed)?;
        let small_spec = spec.downscaled(downscale);
        let small = generate(&small_spec, seed)?;
        let (w, h) = (small_spec.width, small_spec.height);
        Ok(Sample {
            full_width: spec.width,
            full_height: spec.height,
            depth_full: full.depth,
            depth: small.depth,
            normal: small.normal,
            distance: small.distance,
            intrinsics: small_spec.intrinsics,
            rays: small_spec.intrinsics.ray_tensor(w, h),
            context: encoder.encode(&full.rgb, h, w)?,
        })
    }

    pub fn valid(&self) -> Mask {
        self.depth.valid.clone()
    }
}

/// Targets computed from detached predictions: the plane mask of the
/// consistency loss and the two uncertainty targets.
#[derive(Debug, Clone, PartialEq)]
pub struct DetachedTargets {
    pub plane_mask: PlaneMask,
    pub u1: Grid<f64>,
    pub u2: Grid<f64>,
}

/// Where the detached targets come from.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    /// Recomputed from the current predictions, with planes detected online.
    Online(&'a SegmentationParams),
    /// Held fixed, so the loss is a smooth function of the weights (used by
    /// finite-difference checks).
    Frozen(&'a DetachedTargets),
}

/// Everything a forward pass produces.
#[derive(Debug, Clone)]
pub struct Forward {
    pub normals: Var,
    pub distance: Var,
    pub d1: Var,
    pub d2: Var,
    pub u1: Var,
    pub u2: Var,
    pub trace: RefinementTrace,
    pub fused: Var,
    pub targets: DetachedTargets,
    pub terms: LossTerms,
    pub total: Var,
}

fn head(tape: &mut Tape, ctx: Var, h: &HeadVars) -> Result<(Var, Var)> {
    let pen = tape.conv2d_separable(ctx, &h.pen)?;
    let pen = tape.tanh(pen)?;
    let out = tape.conv2d_separable(pen, &h.out)?;
    Ok((pen, out))
}

/// Depth from normal and distance, `D = dist / max(N . ray, floor)`.
pub fn depth_from_plane_var(tape: &mut Tape, normals: Var, distance: Var, rays: Var, floor: f64) -> Result<Var> {
    let prod = tape.mul(normals, rays)?;
    let den = tape.channel_sum(prod)?;
    let den = tape.clamp_min(den, floor)?;
    tape.div(distance, den)
}

pub fn forward(
    tape: &mut Tape,
    model: &DemoModel,
    vars: &ModelVars,
    sample: &Sample,
    weights: &LossWeights,
    targets: Targets<'_>,
) -> Result<Forward> {
    let cfg = &model.config;
    let ctx = tape.constant(sample.context.clone());
    let rays = tape.constant(sample.rays.clone());

    let (pen1, nd) = head(tape, ctx, &vars.nd_head)?;
    let raw_n = tape.slice_channels(nd, 0, 3)?;
    let normals = tape.normalize_channels(raw_n, 1e-12)?;
    let log_dist = tape.slice_channels(nd, 3, 1)?;
    let distance = tape.exp(log_dist)?;
    let u1_logit = tape.slice_channels(nd, 4, 1)?;
    let u1 = tape.sigmoid(u1_logit)?;
    let d1 = depth_from_plane_var(tape, normals, distance, rays, cfg.den_floor)?;

    let (pen2, dh) = head(tape, ctx, &vars.depth_head)?;
    let log_depth = tape.slice_channels(dh, 0, 1)?;
    let d2 = tape.exp(log_depth)?;
    let u2_logit = tape.slice_channels(dh, 1, 1)?;
    let u2 = tape.sigmoid(u2_logit)?;

    let h0 = init_hidden(tape, pen1, pen2, vars.refinement.init)?;
    let r = &cfg.refinement;
    let trace = refine(tape, d1, d2, u1, u2, ctx, h0, &vars.refinement, r.t_max, r.min_depth)?;

    let (fh, fw) = (sample.full_height, sample.full_width);
    let valid = sample.valid();
    let valid_full = sample.depth_full.valid.clone();
    let mut up1 = Vec::with_capacity(trace.d1.len());
    let mut up2 = Vec::with_capacity(trace.d2.len());
    for (a, b) in trace.d1.iter().zip(&trace.d2) {
        up1.push(tape.bilinear_resize(*a, fh, fw)?);
        up2.push(tape.bilinear_resize(*b, fh, fw)?);
    }
    let depth = multiscale_depth_loss(tape, &up1, &up2, &sample.depth_full, &valid_full, weights)?;
    let normal = normal_cosine_loss(tape, normals, &sample.normal, &valid, Reduction::Mean)?;
    let dist_l = distance_l1_loss(tape, distance, &sample.distance, &valid, Reduction::Mean)?;

    let targets = match targets {
        Targets::Frozen(t) => t.clone(),
        Targets::Online(params) => {
            let detached = |v: Var| DepthMap::from_positive(tape.value(v).channel_grid(0));
            let n = NormalMap::from_raw_normals(tape.value(normals).vector_grid()?);
            let d = DistanceMap::from_positive(tape.value(distance).channel_grid(0));
            DetachedTargets {
                plane_mask: detect_planes(&n, &d, params)?.mask,
                u1: uncertainty_target(&detached(d1), &sample.depth, weights.b_tolerance)?,
                u2: uncertainty_target(&detached(d2), &sample.depth, weights.b_tolerance)?,
            }
        }
    };
    let unc = uncertainty_loss(tape, u1, u2, &targets.u1, &targets.u2, &valid, Reduction::Mean)?;
    let plane = plane_consistency_loss(tape, normals, distance, &targets.plane_mask, Reduction::Mean)?;

    let terms = LossTerms { depth, normal, distance: dist_l, uncertainty: unc, plane };
    let total = overall_loss(tape, &terms, weights)?;
    let (f1, f2) = trace.final_depths();
    let fused = fuse_var(tape, f1, f2, fh, fw)?;
    Ok(Forward { normals, distance, d1, d2, u1, u2, trace, fused, targets, terms, total })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub segmentation: SegmentationParams,
}

impl Default for TrainOptions {
    /// 300 steps at rate 0.01 with the gradient norm clipped to 5; regions of
    /// 4 or more pixels count as planes, since the working grid of a small
    /// scene has only a few dozen pixels.
    fn default() -> Self {
        TrainOptions {
            steps: 300,
            learning_rate: 0.01,
            clip_norm: Some(5.0),
            segmentation: SegmentationParams { min_region_size: 4, ..SegmentationParams::default() },
        }
    }
}

/// Per-step record of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    /// Loss before each update.
    pub losses: Vec<f64>,
    /// Loss after the last update.
    pub final_loss: f64,
}

/// Plain gradient descent on the overall loss, with the plane mask detected
/// online at every step.
pub fn train(
    model: &mut DemoModel,
    sample: &Sample,
    weights: &LossWeights,
    opts: &TrainOptions,
) -> Result<TrainLog> {
    if !(opts.learning_rate > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    let mut losses = Vec::with_capacity(opts.steps);
    for _ in 0..opts.steps {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let out = forward(&mut tape, model, &vars, sample, weights, Targets::Online(&opts.segmentation))?;
        losses.push(tape.value(out.total).item());
        tape.backward(out.total)?;
        let handles = vars_in_order(&vars);
        let grads: Vec<&Tensor> = handles.iter().map(|v| tape.grad(*v)).collect();
        let norm = grads.iter().flat_map(|g| g.data()).map(|g| g * g).sum::<f64>().sqrt();
        let scale = match opts.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let step = opts.learning_rate * scale;
        for (p, g) in model.tensors_mut().into_iter().zip(grads) {
            for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv -= step * gv;
            }
        }
    }
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let out = forward(&mut tape, model, &vars, sample, weights, Targets::Online(&opts.segmentation))?;
    Ok(TrainLog { losses, final_loss: tape.value(out.total).item() })
}

fn vars_in_order(v: &ModelVars) -> Vec<Var> {
    let mut out = Vec::new();
    for h in [v.nd_head, v.depth_head] {
        out.extend(h.pen.vars());
        out.extend(h.out.vars());
    }
    out.extend(v.refinement.vars());
    out
}

impl ModelVars {
    /// Handles in [`DemoModel::named`] order.
    pub fn vars(&self) -> Vec<Var> {
        vars_in_order(self)
    }
}

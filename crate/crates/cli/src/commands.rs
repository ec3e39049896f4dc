use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use nddepth_core::camera::{self, DEFAULT_NORMAL_WINDOW};
use nddepth_core::diagnostics::{format_table, run_gradchecks, DEFAULT_THRESHOLD};
use nddepth_core::io::{self, PlyFormat};
use nddepth_core::metrics::{evaluate_with, SqRelStyle};
use nddepth_core::model::ContextEncoder;
use nddepth_core::refinement::{fuse, refine as run_refinement, RefinementWeights};
use nddepth_core::segmentation::{best_match_iou, detect_planes, max_incident_weight};
use nddepth_core::synthetic::generate;
use nddepth_core::tensor::{bilinear_resize_tensor, Shape};
use nddepth_core::{
    Cap, DepthMap, DistanceMap, Error, Grid, Intrinsics, RunConfig, SceneSpec, Tape, Vector3,
    Tensor,
};

use crate::ConfigArgs;

/// A command-line level validation failure.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// 2 for bad inputs or configuration, 1 for anything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::NonFinite(_) => 1,
                Error::Io(io) => io_code(io.kind()),
                _ => 2,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return io_code(io.kind());
        }
    }
    1
}

fn io_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::NotFound | ErrorKind::InvalidData | ErrorKind::InvalidInput => 2,
        _ => 1,
    }
}

fn load_config(c: &ConfigArgs, extra: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut overrides = c.set.clone();
    for (k, v) in extra {
        if let Some(v) = v {
            overrides.push(format!("{k}={v}"));
        }
    }
    Ok(RunConfig::load(c.config.as_deref(), &overrides)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_intrinsics(path: &Path) -> Result<Intrinsics> {
    io::read_intrinsics(path).with_context(|| format!("reading intrinsics {}", path.display()))
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

#[derive(Args)]
pub struct SynthArgs {
    /// Scene description; the default three-plane scene when omitted
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the shaded RGB rendering as rgb.pfm
    #[arg(long)]
    rgb: bool,
}

pub fn synth(a: SynthArgs, _c: &ConfigArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SceneSpec::parse(&text)?
        }
        None => SceneSpec::default_three_plane(),
    };
    let scene = generate(&spec, a.seed)?;
    create_dir(&a.out)?;
    io::write_depth(a.out.join("depth.pfm"), &scene.depth)?;
    io::write_normals(a.out.join("normal.pfm"), &scene.normal)?;
    io::write_scalar_map(a.out.join("distance.pfm"), &scene.distance.values)?;
    io::write_labels(a.out.join("labels.pgm"), &scene.labels)?;
    io::write_intrinsics(a.out.join("intrinsics.txt"), &spec.intrinsics)?;
    if a.rgb {
        let rgb = scene.rgb.map(|c| nalgebra_vec(*c));
        io::write_pfm(a.out.join("rgb.pfm"), &io::PfmImage::from_vectors(&rgb))?;
    }
    let counts = scene.plane_pixel_counts();
    println!("width={} height={}", spec.width, spec.height);
    println!("planes={}", spec.planes.len());
    println!(
        "plane_pixels={}",
        counts.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    );
    Ok(())
}

fn nalgebra_vec(c: [f64; 3]) -> Vector3<f64> {
    Vector3::from(c)
}

#[derive(Args)]
pub struct Nd2dArgs {
    #[arg(long)]
    normal: PathBuf,
    #[arg(long)]
    distance: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Denominator threshold below which pixels become invalid
    #[arg(long)]
    tau_den: Option<f64>,
}

pub fn nd2d(a: Nd2dArgs, c: &ConfigArgs) -> Result<()> {
    let cfg = load_config(c, &[("tau_den", a.tau_den.map(|v| v.to_string()))])?;
    let k = read_intrinsics(&a.intrinsics)?;
    let normals = io::read_normals(&a.normal)?;
    let distance = DistanceMap::from_positive(io::read_scalar_map(&a.distance)?);
    let depth = camera::depth_from_normal_distance(&normals, &distance, &k, cfg.tau_den)?;
    // converting back must reproduce the input distance
    let back = camera::distance_from_depth_normal(&depth, &normals, &k)?;
    let mut worst = 0.0f64;
    for (i, v) in depth.valid.as_slice().iter().enumerate() {
        if *v {
            let (d0, d1) = (distance.values.as_slice()[i], back.values.as_slice()[i]);
            worst = worst.max((d1 - d0).abs() / d0.abs());
        }
    }
    io::write_depth(&a.out, &depth)?;
    let (lo, hi) = finite_range(
        depth.values.as_slice().iter().zip(depth.valid.as_slice()).filter(|(_, v)| **v).map(|(d, _)| *d),
    );
    println!("invalid_pixels={}", depth.values.len() - depth.valid_count());
    println!("roundtrip_max_rel_err={worst:e}");
    println!("depth_min={lo} depth_max={hi}");
    Ok(())
}

#[derive(Args)]
pub struct D2ndArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    out_normal: PathBuf,
    #[arg(long)]
    out_distance: PathBuf,
    /// Odd side length of the plane-fit window
    #[arg(long, default_value_t = DEFAULT_NORMAL_WINDOW)]
    window: usize,
}

pub fn d2nd(a: D2ndArgs, c: &ConfigArgs) -> Result<()> {
    let cfg = load_config(c, &[])?;
    let k = read_intrinsics(&a.intrinsics)?;
    let depth = io::read_depth(&a.depth)?;
    let normals = camera::normal_from_depth(&depth, &k, a.window)?;
    let distance = camera::distance_from_depth_normal(&depth, &normals, &k)?;
    let back = camera::depth_from_normal_distance(&normals, &distance, &k, cfg.tau_den)?;
    let mut worst = 0.0f64;
    for (i, v) in back.valid.as_slice().iter().enumerate() {
        if *v && depth.valid.as_slice()[i] {
            let (d0, d1) = (depth.values.as_slice()[i], back.values.as_slice()[i]);
            worst = worst.max((d1 - d0).abs() / d0);
        }
    }
    io::write_normals(&a.out_normal, &normals)?;
    io::write_depth(&a.out_distance, &distance)?;
    let (lo, hi) = finite_range(
        distance.values.as_slice().iter().zip(distance.valid.as_slice()).filter(|(_, v)| **v).map(|(d, _)| *d),
    );
    println!("invalid_pixels={}", distance.values.len() - distance.valid_count());
    println!("roundtrip_max_rel_err={worst:e}");
    println!("distance_min={lo} distance_max={hi}");
    Ok(())
}

#[derive(Args)]
pub struct SegmentArgs {
    #[arg(long)]
    normal: PathBuf,
    #[arg(long)]
    distance: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Merge threshold constant
    #[arg(long)]
    k: Option<f64>,
    /// Regions need more pixels than this to count as planes
    #[arg(long)]
    min_region_size: Option<usize>,
    /// Ground-truth plane labels; prints the best-match IoU per plane
    #[arg(long)]
    gt_labels: Option<PathBuf>,
}

pub fn segment(a: SegmentArgs, c: &ConfigArgs) -> Result<()> {
    let cfg = load_config(
        c,
        &[
            ("k", a.k.map(|v| v.to_string())),
            ("min_region_size", a.min_region_size.map(|v| v.to_string())),
        ],
    )?;
    let normals = io::read_normals(&a.normal)?;
    let distance = DistanceMap::from_positive(io::read_scalar_map(&a.distance)?);
    let det = detect_planes(&normals, &distance, &cfg.segmentation)?;
    create_dir(&a.out)?;
    io::write_labels(a.out.join("segments.pgm"), &det.segments.labels)?;
    io::write_mask(a.out.join("plane_mask.pgm"), &det.mask.mask)?;
    io::write_scalar_map(a.out.join("dissimilarity.pfm"), &max_incident_weight(&det.edges))?;
    io::write_atomic(a.out.join("effective.cfg"), cfg.to_text().as_bytes())?;
    println!("segments={}", det.segments.segment_count());
    println!("retained={}", det.mask.retained.len());
    println!("covered_pixels={}", det.mask.covered());
    if let Some(p) = &a.gt_labels {
        let gt = io::read_labels(p)?;
        let ious = best_match_iou(&gt, &det.segments)?;
        println!(
            "iou={}",
            ious.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct RefineArgs {
    /// Initial depth of the normal-distance head
    #[arg(long)]
    d1: PathBuf,
    /// Initial depth of the depth head
    #[arg(long)]
    d2: PathBuf,
    /// Uncertainty maps; zero when omitted
    #[arg(long)]
    u1: Option<PathBuf>,
    #[arg(long)]
    u2: Option<PathBuf>,
    /// Context feature as a weight container holding one tensor named `context`
    #[arg(long, conflicts_with = "rgb")]
    context: Option<PathBuf>,
    /// RGB image (3-channel PFM) encoded by the fixed random context encoder
    #[arg(long)]
    rgb: Option<PathBuf>,
    /// Refinement weights; random (with neutral update heads) from `seed` when omitted
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Inputs are at full resolution; work at 1/N and fuse back to the input size
    #[arg(long, default_value_t = 1)]
    downsample: usize,
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn tensor_of(g: &Grid<f64>) -> Tensor {
    Tensor::from_grid(g)
}

pub fn refine(a: RefineArgs, c: &ConfigArgs) -> Result<()> {
    let cfg = load_config(c, &[("t_max", a.t_max.map(|v| v.to_string()))])?;
    if a.downsample == 0 {
        return Err(usage("--downsample must be at least 1"));
    }
    let d1 = io::read_depth(&a.d1)?;
    let d2 = io::read_depth(&a.d2)?;
    if d1.dims() != d2.dims() {
        return Err(usage(format!("d1 is {:?} but d2 is {:?}", d1.dims(), d2.dims())));
    }
    let (full_w, full_h) = d1.dims();
    if full_w % a.downsample != 0 || full_h % a.downsample != 0 {
        return Err(usage(format!("{full_w}x{full_h} is not divisible by {}", a.downsample)));
    }
    let (w, h) = (full_w / a.downsample, full_h / a.downsample);
    let shrink = |t: Tensor| if a.downsample == 1 { t } else { bilinear_resize_tensor(&t, h, w) };
    let load_u = |p: &Option<PathBuf>| -> Result<Tensor> {
        match p {
            Some(p) => {
                let g = io::read_scalar_map(p)?;
                if g.dims() != (full_w, full_h) {
                    return Err(usage(format!("{} does not match the depth size", p.display())));
                }
                Ok(shrink(tensor_of(&g)))
            }
            None => Ok(Tensor::zeros(Shape::new(1, h, w))),
        }
    };
    let (u1, u2) = (load_u(&a.u1)?, load_u(&a.u2)?);

    let weights = match &a.weights {
        Some(p) => RefinementWeights::from_named(
            io::read_weights(p).with_context(|| format!("reading weights {}", p.display()))?,
        )?,
        None => RefinementWeights::random(&cfg.refinement, cfg.refinement.hidden_channels, cfg.seed)?,
    };
    let ctx_channels = weights.context_channels();
    let context = if let Some(p) = &a.context {
        let mut t = io::read_weights(p)?;
        let i = t
            .iter()
            .position(|(n, _)| n == "context")
            .ok_or_else(|| usage(format!("{} holds no tensor named `context`", p.display())))?;
        t.swap_remove(i).1
    } else if let Some(p) = &a.rgb {
        let rgb = io::read_pfm(p)?.to_vectors()?;
        let rgb = rgb.map(|v| [v.x, v.y, v.z]);
        ContextEncoder::random(ctx_channels, cfg.seed).encode(&rgb, h, w)?
    } else {
        Tensor::zeros(Shape::new(ctx_channels, h, w))
    };
    if context.shape() != Shape::new(ctx_channels, h, w) {
        return Err(usage(format!(
            "context is {} but the weights expect {}",
            context.shape(),
            Shape::new(ctx_channels, h, w)
        )));
    }

    let mut tape = Tape::new();
    let v = weights.bind(&mut tape);
    let vd1 = tape.constant(shrink(tensor_of(&d1.zero_filled())));
    let vd2 = tape.constant(shrink(tensor_of(&d2.zero_filled())));
    let vu1 = tape.constant(u1);
    let vu2 = tape.constant(u2);
    let vctx = tape.constant(context);
    // no head features are available here, so the hidden state starts at tanh(0)
    let h0 = tape.constant(Tensor::zeros(Shape::new(weights.hidden_channels(), h, w)));
    let r = &cfg.refinement;
    let trace = run_refinement(&mut tape, vd1, vd2, vu1, vu2, vctx, h0, &v, r.t_max, r.min_depth)?;

    create_dir(&a.out)?;
    let trace_dir = a.out.join("trace");
    create_dir(&trace_dir)?;
    let grid_of = |t: &Tensor| t.channel_grid(0);
    for (i, (x, y)) in trace.d1.iter().zip(&trace.d2).enumerate() {
        io::write_scalar_map(trace_dir.join(format!("d1_t{}.pfm", i + 1)), &grid_of(tape.value(*x)))?;
        io::write_scalar_map(trace_dir.join(format!("d2_t{}.pfm", i + 1)), &grid_of(tape.value(*y)))?;
    }
    let (f1, f2) = trace.final_depths();
    io::write_scalar_map(a.out.join("d1_star.pfm"), &grid_of(tape.value(f1)))?;
    io::write_scalar_map(a.out.join("d2_star.pfm"), &grid_of(tape.value(f2)))?;
    let fused: DepthMap = fuse(tape.value(f1), tape.value(f2), full_h, full_w)?;
    io::write_depth(a.out.join("fused.pfm"), &fused)?;
    io::write_atomic(a.out.join("effective.cfg"), cfg.to_text().as_bytes())?;

    let change = |v, orig: &DepthMap| {
        let t: &Tensor = tape.value(v);
        let o = shrink(tensor_of(&orig.zero_filled()));
        t.max_abs_diff(&o)
    };
    println!("iterations={}", trace.d1.len());
    println!("working_size={w}x{h}");
    println!("max_abs_update_d1={:e}", change(f1, &d1));
    println!("max_abs_update_d2={:e}", change(f2, &d2));
    Ok(())
}

#[derive(Args)]
pub struct InitWeightsArgs {
    #[arg(long)]
    out: PathBuf,
    /// Channels of the concatenated head features feeding the hidden state
    #[arg(long)]
    pen_channels: Option<usize>,
}

pub fn init_weights(a: InitWeightsArgs, c: &ConfigArgs) -> Result<()> {
    let cfg = load_config(c, &[])?;
    let pen = a.pen_channels.unwrap_or(cfg.refinement.hidden_channels);
    let w = RefinementWeights::random(&cfg.refinement, pen, cfg.seed)?;
    let named = w.named();
    io::write_weights(&a.out, named.iter().map(|(n, t)| (n.as_str(), *t)))?;
    println!("tensors={}", named.len());
    println!("parameters={}", named.iter().map(|(_, t)| t.shape().numel()).sum::<usize>());
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Ground truth must exceed this depth
    #[arg(long, default_value_t = 0.0)]
    cap_min: f64,
    /// Ground truth must not exceed this depth
    #[arg(long, default_value_t = 80.0)]
    cap_max: f64,
    /// Report squared relative error in the online-benchmark percentage form
    #[arg(long)]
    benchmark_style: bool,
    /// Append the report as a CSV row (header written for new files)
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write the key=value report to a file
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let cap = Cap::new(a.cap_min, a.cap_max)?;
    let pred = io::read_depth(&a.pred)?;
    let gt = io::read_depth(&a.gt)?;
    let style = if a.benchmark_style { SqRelStyle::Benchmark } else { SqRelStyle::Standard };
    let report = evaluate_with(&pred, &gt, cap, style)?;
    print!("{}", report.to_key_value());
    if let Some(p) = &a.out {
        io::write_metric_report(p, &report)?;
    }
    if let Some(p) = &a.csv {
        let mut text = match fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::NotFound => {
                format!("{}\n", nddepth_core::MetricReport::csv_header())
            }
            Err(e) => return Err(e.into()),
        };
        text.push_str(&report.to_csv_row());
        text.push('\n');
        io::write_atomic(p, text.as_bytes())?;
    }
    Ok(())
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Component to check (repeatable); all when omitted
    #[arg(long)]
    component: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    if !(a.threshold > 0.0) {
        return Err(usage("--threshold must be positive"));
    }
    let rows = run_gradchecks(&a.component, a.seed, a.threshold)?;
    print!("{}", format_table(&rows));
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        bail!("{failed} component(s) exceed relative error {:e}", a.threshold);
    }
    Ok(())
}

#[derive(Args)]
pub struct PlyArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    /// Vertex colors from a 3-channel PFM with values in [0, 1]
    #[arg(long)]
    rgb: Option<PathBuf>,
    /// Only pixels set in this PGM mask are exported
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Write ASCII instead of binary little-endian
    #[arg(long)]
    ascii: bool,
}

pub fn ply(a: PlyArgs) -> Result<()> {
    let k = read_intrinsics(&a.intrinsics)?;
    let mut depth = io::read_depth(&a.depth)?;
    if let Some(p) = &a.mask {
        let mask = io::read_mask(p)?;
        if mask.dims() != depth.dims() {
            return Err(usage("mask size differs from depth size"));
        }
        for (v, m) in depth.valid.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *v &= *m;
        }
    }
    let rgb = match &a.rgb {
        Some(p) => Some(io::read_pfm(p)?.to_vectors()?.map(|v| [v.x, v.y, v.z])),
        None => None,
    };
    let cloud = camera::pointcloud_from_depth(&depth, &k, rgb.as_ref())?;
    let format = if a.ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
    io::write_ply(&a.out, &cloud, format)?;
    println!("vertices={}", cloud.points.len());
    println!("colored={}", cloud.colors.is_some());
    Ok(())
}

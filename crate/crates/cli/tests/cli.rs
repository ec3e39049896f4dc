use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nddepth_core::io;
use nddepth_core::{DepthMap, Grid, Tensor};
use tempfile::TempDir;

fn nddepth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nddepth")).args(args).output().expect("spawn nddepth")
}

fn ok(args: &[&str]) -> String {
    let out = nddepth(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    nddepth(args).status.code().expect("exit code")
}

fn value<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in {stdout}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn scene(dir: &TempDir) -> PathBuf {
    let out = dir.path().join("scene");
    ok(&["synth", "--out", p(&out)]);
    out
}

#[test]
fn synth_writes_five_files_deterministically() {
    let dir = TempDir::new().unwrap();
    let a = scene(&dir);
    let b = dir.path().join("again");
    ok(&["synth", "--out", p(&b)]);
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["depth.pfm", "distance.pfm", "intrinsics.txt", "labels.pgm", "normal.pfm"]);
    for n in &names {
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap(), "{n}");
    }
}

#[test]
fn synth_rejects_degenerate_spec() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("bad.scene");
    std::fs::write(&spec, "width = 32\nheight = 24\nplane = 0 0 0 1\n").unwrap();
    assert_eq!(code(&["synth", "--spec", p(&spec), "--out", p(&dir.path().join("o"))]), 2);
    std::fs::write(&spec, "width = 32\nheight = 24\n").unwrap();
    assert_eq!(code(&["synth", "--spec", p(&spec), "--out", p(&dir.path().join("o"))]), 2);
}

#[test]
fn nd2d_reproduces_scene_depth() {
    let dir = TempDir::new().unwrap();
    let s = scene(&dir);
    let out = dir.path().join("d.pfm");
    let stdout = ok(&[
        "nd2d",
        "--normal", p(&s.join("normal.pfm")),
        "--distance", p(&s.join("distance.pfm")),
        "--intrinsics", p(&s.join("intrinsics.txt")),
        "--out", p(&out),
    ]);
    let err: f64 = value(&stdout, "roundtrip_max_rel_err").parse().unwrap();
    assert!(err < 1e-9, "{err}");
    assert_eq!(value(&stdout, "invalid_pixels"), "0");
    let got = io::read_depth(&out).unwrap();
    let want = io::read_depth(s.join("depth.pfm")).unwrap();
    for (a, b) in got.values.as_slice().iter().zip(want.values.as_slice()) {
        assert!((a - b).abs() <= 1e-6 * b, "{a} vs {b}");
    }
}

#[test]
fn d2nd_round_trip_and_missing_intrinsics() {
    let dir = TempDir::new().unwrap();
    let s = scene(&dir);
    let (n, d) = (dir.path().join("n.pfm"), dir.path().join("dist.pfm"));
    let stdout = ok(&[
        "d2nd",
        "--depth", p(&s.join("depth.pfm")),
        "--intrinsics", p(&s.join("intrinsics.txt")),
        "--out-normal", p(&n),
        "--out-distance", p(&d),
    ]);
    let err: f64 = value(&stdout, "roundtrip_max_rel_err").parse().unwrap();
    assert!(err < 1e-9, "{err}");
    assert!(n.exists() && d.exists());
    let missing = dir.path().join("nope.txt");
    let c = code(&[
        "d2nd",
        "--depth", p(&s.join("depth.pfm")),
        "--intrinsics", p(&missing),
        "--out-normal", p(&n),
        "--out-distance", p(&d),
    ]);
    assert_eq!(c, 2);
}

#[test]
fn segment_recovers_scene_planes() {
    let dir = TempDir::new().unwrap();
    let s = scene(&dir);
    let out = dir.path().join("seg");
    let stdout = ok(&[
        "segment",
        "--normal", p(&s.join("normal.pfm")),
        "--distance", p(&s.join("distance.pfm")),
        "--gt-labels", p(&s.join("labels.pgm")),
        "--out", p(&out),
    ]);
    assert!(value(&stdout, "retained").parse::<usize>().unwrap() >= 3);
    for iou in value(&stdout, "iou").split(',') {
        assert!(iou.parse::<f64>().unwrap() >= 0.95, "{stdout}");
    }
    for f in ["segments.pgm", "plane_mask.pgm", "dissimilarity.pfm", "effective.cfg"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn segment_constant_maps_form_one_region() {
    let dir = TempDir::new().unwrap();
    let normals = Grid::filled(12, 9, nddepth_core::Vector3::new(0.0, 0.0, 1.0));
    let n = dir.path().join("n.pfm");
    let d = dir.path().join("d.pfm");
    io::write_pfm(&n, &io::PfmImage::from_vectors(&normals)).unwrap();
    io::write_scalar_map(&d, &Grid::filled(12, 9, 2.0)).unwrap();
    let stdout = ok(&[
        "segment", "--normal", p(&n), "--distance", p(&d), "--min-region-size", "10",
        "--out", p(&dir.path().join("o")),
    ]);
    assert_eq!(value(&stdout, "segments"), "1");
    assert_eq!(value(&stdout, "covered_pixels"), "108");
}

fn depth_pair(dir: &TempDir) -> (PathBuf, PathBuf, DepthMap) {
    let d1 = DepthMap::from_positive(Grid::from_fn(16, 12, |x, y| 1.0 + 0.05 * x as f64 + 0.1 * y as f64));
    let d2 = DepthMap::from_positive(Grid::filled(16, 12, 2.0));
    let (a, b) = (dir.path().join("d1.pfm"), dir.path().join("d2.pfm"));
    io::write_depth(&a, &d1).unwrap();
    io::write_depth(&b, &d2).unwrap();
    (a, b, d1)
}

#[test]
fn refine_with_fresh_weights_is_identity() {
    let dir = TempDir::new().unwrap();
    let (a, b, d1) = depth_pair(&dir);
    let out = dir.path().join("r");
    let stdout = ok(&["refine", "--d1", p(&a), "--d2", p(&b), "--out", p(&out), "--t-max", "4"]);
    assert_eq!(value(&stdout, "iterations"), "4");
    assert_eq!(std::fs::read_dir(out.join("trace")).unwrap().count(), 8);
    let got = io::read_scalar_map(out.join("d1_star.pfm")).unwrap();
    assert_eq!(got.as_slice(), d1.values.map(|v| *v as f32 as f64).as_slice());
    let fused = io::read_depth(out.join("fused.pfm")).unwrap();
    for (f, x) in fused.values.as_slice().iter().zip(d1.values.as_slice()) {
        assert!((f - 0.5 * (x + 2.0)).abs() < 1e-6);
    }
}

#[test]
fn refine_constant_update_is_linear() {
    let dir = TempDir::new().unwrap();
    let (a, b, _) = depth_pair(&dir);
    let w = dir.path().join("w.ndgw");
    ok(&["init-weights", "--out", p(&w)]);
    let mut tensors = io::read_weights(&w).unwrap();
    for (name, t) in tensors.iter_mut() {
        if name == "head2.bias" {
            *t = Tensor::full(t.shape(), 0.25);
        }
    }
    io::write_weights(&w, tensors.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
    let out = dir.path().join("r");
    ok(&["refine", "--d1", p(&a), "--d2", p(&b), "--weights", p(&w), "--out", p(&out)]);
    for t in 1..=3 {
        let d2 = io::read_scalar_map(out.join(format!("trace/d2_t{t}.pfm"))).unwrap();
        assert!(d2.as_slice().iter().all(|v| (v - (2.0 + 0.25 * t as f64)).abs() < 1e-6));
    }
}

#[test]
fn refine_rejects_unknown_weight_version() {
    let dir = TempDir::new().unwrap();
    let (a, b, _) = depth_pair(&dir);
    let w = dir.path().join("w.ndgw");
    ok(&["init-weights", "--out", p(&w)]);
    let mut bytes = std::fs::read(&w).unwrap();
    bytes[4] = 9;
    std::fs::write(&w, bytes).unwrap();
    let out = dir.path().join("r");
    assert_eq!(code(&["refine", "--d1", p(&a), "--d2", p(&b), "--weights", p(&w), "--out", p(&out)]), 2);
}

#[test]
fn eval_identity_and_hand_case() {
    let dir = TempDir::new().unwrap();
    let s = scene(&dir);
    let gt = s.join("depth.pfm");
    let stdout = ok(&["eval", "--pred", p(&gt), "--gt", p(&gt)]);
    assert_eq!(value(&stdout, "abs_rel"), "0");
    assert_eq!(value(&stdout, "delta1"), "1");
    assert_eq!(value(&stdout, "n_valid"), "19200");

    let pred = dir.path().join("p.pfm");
    let gt4 = dir.path().join("g.pfm");
    io::write_scalar_map(&pred, &Grid::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    io::write_scalar_map(&gt4, &Grid::from_vec(2, 2, vec![1.0, 2.0, 3.0, 2.0]).unwrap()).unwrap();
    let csv = dir.path().join("m.csv");
    let stdout = ok(&["eval", "--pred", p(&pred), "--gt", p(&gt4), "--csv", p(&csv)]);
    let abs_rel: f64 = value(&stdout, "abs_rel").parse().unwrap();
    assert!((abs_rel - 0.25).abs() < 1e-12);
    assert_eq!(value(&stdout, "delta1"), "0.75");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 2);
}

#[test]
fn eval_without_overlap_fails() {
    let dir = TempDir::new().unwrap();
    let s = scene(&dir);
    let gt = s.join("depth.pfm");
    assert_eq!(code(&["eval", "--pred", p(&gt), "--gt", p(&gt), "--cap-min", "50", "--cap-max", "80"]), 2);
}

#[test]
fn gradcheck_is_deterministic_and_validates_names() {
    let args = ["gradcheck", "--component", "silog", "--component", "conv_gru_step", "--seed", "3"];
    let first = ok(&args);
    assert_eq!(first, ok(&args));
    assert_eq!(first.matches("PASS").count(), 2);
    assert_eq!(code(&["gradcheck", "--component", "nonsense"]), 2);
}

#[test]
fn ply_points_lie_on_their_planes() {
    let dir = TempDir::new().unwrap();
    let s = scene(&dir);
    let out = dir.path().join("c.ply");
    let stdout = ok(&[
        "ply", "--depth", p(&s.join("depth.pfm")), "--intrinsics", p(&s.join("intrinsics.txt")),
        "--out", p(&out), "--ascii",
    ]);
    assert_eq!(value(&stdout, "vertices"), "19200");
    let cloud = io::read_ply(&out).unwrap();
    let normals = io::read_normals(s.join("normal.pfm")).unwrap();
    let dist = io::read_scalar_map(s.join("distance.pfm")).unwrap();
    // vertices are emitted in row-major order
    for (i, pt) in cloud.points.iter().enumerate() {
        let n = normals.values.as_slice()[i];
        let residual = n.dot(pt) - dist.as_slice()[i];
        assert!(residual.abs() < 1e-4, "vertex {i}: {residual}");
    }
}

#[test]
fn ply_respects_mask_and_colors() {
    let dir = TempDir::new().unwrap();
    let s = dir.path().join("scene");
    ok(&["synth", "--out", p(&s), "--rgb"]);
    let mask = dir.path().join("m.pgm");
    io::write_mask(&mask, &Grid::filled(160, 120, false)).unwrap();
    let out = dir.path().join("c.ply");
    let (depth, k) = (s.join("depth.pfm"), s.join("intrinsics.txt"));
    let base = ["ply", "--depth", p(&depth), "--intrinsics", p(&k)];
    let stdout = ok(&[&base[..], &["--mask", p(&mask), "--out", p(&out)]].concat());
    assert_eq!(value(&stdout, "vertices"), "0");
    let stdout = ok(&[&base[..], &["--rgb", p(&s.join("rgb.pfm")), "--out", p(&out)]].concat());
    assert_eq!(value(&stdout, "colored"), "true");
    assert!(io::read_ply(&out).unwrap().colors.is_some());
}

#[test]
fn config_file_and_overrides_apply() {
    let dir = TempDir::new().unwrap();
    let (a, b, _) = depth_pair(&dir);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "t_max = 5\n").unwrap();
    let out = dir.path().join("r");
    let stdout = ok(&["--config", p(&cfg), "refine", "--d1", p(&a), "--d2", p(&b), "--out", p(&out)]);
    assert_eq!(value(&stdout, "iterations"), "5");
    let stdout = ok(&[
        "--config", p(&cfg), "--set", "t_max=2", "refine", "--d1", p(&a), "--d2", p(&b), "--out", p(&out),
    ]);
    assert_eq!(value(&stdout, "iterations"), "2");
    assert_eq!(code(&["--set", "bogus=1", "refine", "--d1", p(&a), "--d2", p(&b), "--out", p(&out)]), 2);
}

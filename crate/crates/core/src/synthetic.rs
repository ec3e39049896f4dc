//! Piecewise-planar scene generator with analytic depth, normal, distance
//! and plane labels. Every test oracle in the crate is built on it.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::grid::{DepthMap, DistanceMap, Grid, NormalMap, ValidMap};
use crate::kv;

/// Minimum `N . K^-1 p~` for a plane to be rendered at a pixel.
pub const MIN_RAY_COSINE: f64 = 1e-3;

/// `N . P = distance`, with unit `N` and `distance > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub distance: f64,
}

impl Plane {
    /// Normalizes `normal`; the distance is divided by the same norm so the
    /// point set is unchanged.
    pub fn new(normal: Vector3<f64>, distance: f64) -> Result<Self> {
        let len = normal.norm();
        if !(len > 1e-12 && len.is_finite()) {
            return Err(Error::Scene(format!("plane normal {normal:?} has no direction")));
        }
        let distance = distance / len;
        if !(distance > 0.0 && distance.is_finite()) {
            return Err(Error::Scene(format!(
                "plane distance must be positive, got {distance}"
            )));
        }
        Ok(Plane {
            normal: normal / len,
            distance,
        })
    }

    /// Depth along a `K^-1 p~` ray, if the plane faces it usefully.
    pub fn depth_along(&self, ray: &Vector3<f64>) -> Option<f64> {
        let den = self.normal.dot(ray);
        (den > MIN_RAY_COSINE).then(|| self.distance / den)
    }
}

/// How pixels are assigned to planes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Each pixel sees the closest plane in front of the camera.
    Nearest,
    /// `rows x cols` rectangular cells, assigned to planes cyclically in
    /// row-major order.
    Tiles { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub planes: Vec<Plane>,
    pub layout: Layout,
}

impl SceneSpec {
    pub fn default_intrinsics() -> Intrinsics {
        Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 79.5,
            cy: 59.5,
        }
    }

    /// 160x120 view of a floor, a back wall and a tilted side wall.
    pub fn default_three_plane() -> Self {
        let planes = vec![
            Plane::new(Vector3::new(0.0, 1.0, 0.0), 1.0).unwrap(),
            Plane::new(Vector3::new(0.0, 0.0, 1.0), 3.5).unwrap(),
            Plane::new(Vector3::new(0.857_492_925_712_544, 0.0, 0.514_495_755_427_526), 2.6).unwrap(),
        ];
        SceneSpec {
            width: 160,
            height: 120,
            intrinsics: SceneSpec::default_intrinsics(),
            planes,
            layout: Layout::Nearest,
        }
    }

    /// The default three planes seen at another resolution, with the focal
    /// length scaled so the horizontal field of view is unchanged.
    pub fn three_plane(width: usize, height: usize) -> Self {
        let f = 100.0 * width as f64 / 160.0;
        SceneSpec {
            width,
            height,
            intrinsics: Intrinsics {
                fx: f,
                fy: f,
                cx: width as f64 / 2.0 - 0.5,
                cy: height as f64 / 2.0 - 0.5,
            },
            ..SceneSpec::default_three_plane()
        }
    }

    /// A single plane filling the view.
    pub fn single_plane(width: usize, height: usize, intrinsics: Intrinsics, plane: Plane) -> Self {
        SceneSpec {
            width,
            height,
            intrinsics,
            planes: vec![plane],
            layout: Layout::Tiles { rows: 1, cols: 1 },
        }
    }

    /// Random tiled scene with `n_planes` planes tilted at most 35 degrees
    /// off the optical axis, at distances in `[1, 5)` m.
    pub fn random(n_planes: usize, width: usize, height: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planes = (0..n_planes.max(1))
            .map(|_| {
                let tilt = rng.gen_range(0.0..35f64.to_radians());
                let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
                let n = Vector3::new(
                    tilt.sin() * azimuth.cos(),
                    tilt.sin() * azimuth.sin(),
                    tilt.cos(),
                );
                Plane::new(n, rng.gen_range(1.0..5.0)).unwrap()
            })
            .collect::<Vec<_>>();
        let n = planes.len();
        let layout = if n <= 3 {
            Layout::Tiles { rows: 1, cols: n }
        } else {
            Layout::Tiles {
                rows: 2,
                cols: n.div_ceil(2),
            }
        };
        let scale = width as f64 / 160.0;
        SceneSpec {
            width,
            height,
            intrinsics: Intrinsics {
                fx: 100.0 * scale,
                fy: 100.0 * scale,
                cx: (width as f64 - 1.0) / 2.0,
                cy: (height as f64 - 1.0) / 2.0,
            },
            planes,
            layout,
        }
    }

    /// The same scene seen at `1 / factor` resolution.
    pub fn downscaled(&self, factor: usize) -> Self {
        SceneSpec {
            width: (self.width / factor).max(1),
            height: (self.height / factor).max(1),
            intrinsics: self.intrinsics.downscaled(factor as f64),
            ..self.clone()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut width = None;
        let mut height = None;
        let mut intrinsics = None;
        let mut layout = Layout::Nearest;
        let mut planes = Vec::new();
        for e in kv::parse(text)? {
            match e.key.as_str() {
                "width" => width = Some(e.parse::<usize>()?),
                "height" => height = Some(e.parse::<usize>()?),
                "intrinsics" => {
                    let v = e.parse_floats()?;
                    if v.len() != 4 {
                        return Err(Error::Config(format!(
                            "line {}: intrinsics needs fx fy cx cy",
                            e.line
                        )));
                    }
                    intrinsics = Some(Intrinsics::new(v[0], v[1], v[2], v[3])?);
                }
                "layout" => layout = parse_layout(&e)?,
                "plane" => {
                    let v = e.parse_floats()?;
                    if v.len() != 4 {
                        return Err(Error::Config(format!(
                            "line {}: plane needs nx ny nz d",
                            e.line
                        )));
                    }
                    planes.push(Plane::new(Vector3::new(v[0], v[1], v[2]), v[3])?);
                }
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown scene key {other:?}",
                        e.line
                    )))
                }
            }
        }
        let spec = SceneSpec {
            width: width.unwrap_or(160),
            height: height.unwrap_or(120),
            intrinsics: intrinsics.unwrap_or_else(SceneSpec::default_intrinsics),
            planes,
            layout,
        };
        if spec.planes.is_empty() {
            return Err(Error::Scene("scene lists no planes".into()));
        }
        if spec.width == 0 || spec.height == 0 {
            return Err(Error::Scene("image size must be positive".into()));
        }
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let k = &self.intrinsics;
        let mut s = format!(
            "width = {}\nheight = {}\nintrinsics = {} {} {} {}\n",
            self.width, self.height, k.fx, k.fy, k.cx, k.cy
        );
        match self.layout {
            Layout::Nearest => s.push_str("layout = nearest\n"),
            Layout::Tiles { rows, cols } => s.push_str(&format!("layout = tiles {rows}x{cols}\n")),
        }
        for p in &self.planes {
            s.push_str(&format!(
                "plane = {} {} {} {}\n",
                p.normal.x, p.normal.y, p.normal.z, p.distance
            ));
        }
        s
    }
}

fn parse_layout(e: &kv::Entry) -> Result<Layout> {
    let mut tokens = e.value.split_whitespace();
    match tokens.next() {
        Some("nearest") => Ok(Layout::Nearest),
        Some("tiles") => {
            let dims = tokens.next().unwrap_or("1x1");
            let (r, c) = dims
                .split_once('x')
                .and_then(|(r, c)| Some((r.parse().ok()?, c.parse().ok()?)))
                .filter(|(r, c): &(usize, usize)| *r > 0 && *c > 0)
                .ok_or_else(|| Error::Config(format!("line {}: bad tile grid {dims:?}", e.line)))?;
            Ok(Layout::Tiles { rows: r, cols: c })
        }
        _ => Err(Error::Config(format!(
            "line {}: layout must be `nearest` or `tiles RxC`",
            e.line
        ))),
    }
}

/// Generated ground truth. Label `i` refers to `spec.planes[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarScene {
    pub spec: SceneSpec,
    pub labels: Grid<u32>,
    pub depth: DepthMap,
    pub normal: NormalMap,
    pub distance: DistanceMap,
    /// Lambert-shaded RGB in `[0, 1]` with per-plane albedo drawn from the seed.
    pub rgb: Grid<[f64; 3]>,
}

impl PlanarScene {
    pub fn plane_pixel_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.spec.planes.len()];
        for l in self.labels.as_slice() {
            counts[*l as usize] += 1;
        }
        counts
    }

    /// Pixels whose whole `window x window` neighbourhood carries the same label.
    pub fn interior_mask(&self, window: usize) -> Grid<bool> {
        let r = window / 2;
        let (w, h) = self.labels.dims();
        Grid::from_fn(w, h, |x, y| {
            if x < r || y < r || x + r >= w || y + r >= h {
                return false;
            }
            let l = *self.labels.get(x, y);
            (y - r..=y + r).all(|yy| (x - r..=x + r).all(|xx| *self.labels.get(xx, yy) == l))
        })
    }
}

fn tile_of(spec: &SceneSpec, rows: usize, cols: usize, x: usize, y: usize) -> usize {
    let r = (y * rows / spec.height).min(rows - 1);
    let c = (x * cols / spec.width).min(cols - 1);
    (r * cols + c) % spec.planes.len()
}

/// Renders a scene spec into exact ground-truth maps.
pub fn generate(spec: &SceneSpec, seed: u64) -> Result<PlanarScene> {
    if spec.planes.is_empty() {
        return Err(Error::Scene("scene lists no planes".into()));
    }
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::Scene("image size must be positive".into()));
    }
    let k = &spec.intrinsics;
    let (w, h) = (spec.width, spec.height);
    let mut labels = Grid::filled(w, h, 0u32);
    let mut depth = Grid::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let ray = k.ray(x as f64, y as f64);
            let (label, d) = match spec.layout {
                Layout::Nearest => spec
                    .planes
                    .iter()
                    .enumerate()
                    .filter_map(|(i, p)| p.depth_along(&ray).map(|d| (i, d)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .ok_or_else(|| Error::Scene(format!("pixel ({x}, {y}) sees no plane")))?,
                Layout::Tiles { rows, cols } => {
                    let i = tile_of(spec, rows, cols, x, y);
                    let d = spec.planes[i].depth_along(&ray).ok_or_else(|| {
                        Error::Scene(format!(
                            "plane {i} is degenerate at pixel ({x}, {y}): N . ray <= {MIN_RAY_COSINE}"
                        ))
                    })?;
                    (i, d)
                }
            };
            *labels.get_mut(x, y) = label as u32;
            *depth.get_mut(x, y) = d;
        }
    }
    let normal = labels.map(|l| spec.planes[*l as usize].normal);
    let distance = labels.map(|l| spec.planes[*l as usize].distance);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let albedo: Vec<[f64; 3]> = spec
        .planes
        .iter()
        .map(|_| [rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9)])
        .collect();
    let light = Vector3::new(-0.3, -1.0, -0.5).normalize();
    let rgb = labels.map(|l| {
        let i = *l as usize;
        let shade = 0.35 + 0.65 * spec.planes[i].normal.dot(&light).abs();
        albedo[i].map(|a| a * shade)
    });

    Ok(PlanarScene {
        spec: spec.clone(),
        labels,
        depth: ValidMap::all_valid(depth),
        normal: ValidMap::all_valid(normal),
        distance: ValidMap::all_valid(distance),
        rgb,
    })
}

/// Additive Gaussian depth noise and small random normal rotations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseModel {
    pub depth_sigma: f64,
    pub normal_angle_sigma: f64,
}

/// Noisy copies of a scene's depth and normals, deterministic in `seed`.
/// Depths pushed to zero or below become invalid.
pub fn perturb(scene: &PlanarScene, noise: NoiseModel, seed: u64) -> Result<(DepthMap, NormalMap)> {
    if !(noise.depth_sigma >= 0.0 && noise.normal_angle_sigma >= 0.0) {
        return Err(Error::Domain("noise sigmas must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = if noise.depth_sigma > 0.0 {
        let dist = Normal::new(0.0, noise.depth_sigma).expect("sigma is finite and positive");
        DepthMap::from_positive(scene.depth.values.map(|d| d + dist.sample(&mut rng)))
    } else {
        scene.depth.clone()
    };
    let normal = if noise.normal_angle_sigma > 0.0 {
        let dist = Normal::new(0.0, noise.normal_angle_sigma).expect("sigma is finite and positive");
        let values = scene.normal.values.map(|n| {
            let angle: f64 = dist.sample(&mut rng);
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            // orthonormal basis of the tangent plane of n
            let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            let t1 = n.cross(&helper).normalize();
            let t2 = n.cross(&t1);
            let axis = t1 * phi.cos() + t2 * phi.sin();
            (n * angle.cos() + axis * angle.sin()).normalize()
        });
        ValidMap::new(values, scene.normal.valid.clone())?
    } else {
        scene.normal.clone()
    };
    Ok((depth, normal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{depth_from_normal_distance, DEFAULT_TAU_DEN};

    #[test]
    fn fronto_parallel_plane_is_constant_depth() {
        let spec = SceneSpec::single_plane(
            8,
            6,
            SceneSpec::default_intrinsics(),
            Plane::new(Vector3::z(), 2.0).unwrap(),
        );
        let s = generate(&spec, 0).unwrap();
        assert!(s.depth.values.as_slice().iter().all(|d| *d == 2.0));
    }

    #[test]
    fn default_scene_planes_exceed_size_filter() {
        let s = generate(&SceneSpec::default_three_plane(), 0).unwrap();
        let counts = s.plane_pixel_counts();
        assert_eq!(counts.len(), 3);
        assert!(counts.iter().all(|c| *c > 200), "{counts:?}");
        assert_eq!(counts.iter().sum::<usize>(), 160 * 120);
    }

    #[test]
    fn nearest_mode_takes_minimum_intersection() {
        let spec = SceneSpec {
            width: 30,
            height: 20,
            intrinsics: Intrinsics::new(20.0, 20.0, 14.5, 9.5).unwrap(),
            planes: vec![
                Plane::new(Vector3::new(0.3, 0.0, 1.0), 2.0).unwrap(),
                Plane::new(Vector3::new(-0.4, 0.1, 1.0), 2.2).unwrap(),
            ],
            layout: Layout::Nearest,
        };
        let s = generate(&spec, 1).unwrap();
        for y in 0..20 {
            for x in 0..30 {
                let ray = spec.intrinsics.ray(x as f64, y as f64);
                let brute = spec
                    .planes
                    .iter()
                    .map(|p| p.distance / p.normal.dot(&ray))
                    .filter(|d| *d > 0.0)
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(*s.depth.values.get(x, y), brute);
            }
        }
        let counts = s.plane_pixel_counts();
        assert!(counts[0] > 0 && counts[1] > 0);
    }

    #[test]
    fn generated_maps_round_trip_through_normal_distance() {
        for seed in 0..4 {
            let s = generate(&SceneSpec::random(3 + seed as usize, 64, 48, seed), seed).unwrap();
            let d = depth_from_normal_distance(&s.normal, &s.distance, &s.spec.intrinsics, DEFAULT_TAU_DEN)
                .unwrap();
            for (a, b) in d.values.as_slice().iter().zip(s.depth.values.as_slice()) {
                assert!((a - b).abs() <= 1e-12 * b);
            }
        }
    }

    #[test]
    fn labels_share_one_plane_each() {
        let s = generate(&SceneSpec::random(5, 80, 60, 9), 9).unwrap();
        for (i, l) in s.labels.as_slice().iter().enumerate() {
            let p = s.spec.planes[*l as usize];
            assert_eq!(s.normal.values.as_slice()[i], p.normal);
            assert_eq!(s.distance.values.as_slice()[i], p.distance);
        }
    }

    #[test]
    fn degenerate_tile_is_rejected() {
        let spec = SceneSpec::single_plane(
            10,
            10,
            SceneSpec::default_intrinsics(),
            Plane::new(Vector3::x(), 1.0).unwrap(),
        );
        assert!(matches!(generate(&spec, 0), Err(Error::Scene(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SceneSpec::random(4, 40, 30, 3);
        assert_eq!(generate(&spec, 5).unwrap(), generate(&spec, 5).unwrap());
        assert_eq!(SceneSpec::random(4, 40, 30, 3), spec);
    }

    #[test]
    fn spec_text_round_trip() {
        let spec = SceneSpec::random(5, 160, 120, 42);
        let back = SceneSpec::parse(&spec.to_text()).unwrap();
        assert_eq!(back.layout, spec.layout);
        for (a, b) in back.planes.iter().zip(&spec.planes) {
            assert!((a.normal - b.normal).norm() < 1e-15);
            assert!((a.distance - b.distance).abs() < 1e-15);
        }
        assert!(SceneSpec::parse("width = 10\n").is_err());
        assert!(SceneSpec::parse("plane = 0 0 1\n").is_err());
        assert!(SceneSpec::parse("plane = 0 0 1 2\nlayout = spiral\n").is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let s = generate(&SceneSpec::default_three_plane(), 0).unwrap();
        let (d, n) = perturb(&s, NoiseModel::default(), 3).unwrap();
        assert_eq!(d, s.depth);
        assert_eq!(n, s.normal);
    }

    #[test]
    fn depth_noise_is_unbiased_and_normals_stay_unit() {
        let s = generate(&SceneSpec::default_three_plane(), 0).unwrap();
        let sigma = 0.01;
        let noise = NoiseModel {
            depth_sigma: sigma,
            normal_angle_sigma: 0.05,
        };
        let (d, n) = perturb(&s, noise, 11).unwrap();
        let count = d.values.len() as f64;
        let shift: f64 = d
            .values
            .as_slice()
            .iter()
            .zip(s.depth.values.as_slice())
            .map(|(a, b)| a - b)
            .sum::<f64>()
            / count;
        assert!(shift.abs() < 5.0 * sigma / count.sqrt(), "{shift}");
        assert!(n.values.as_slice().iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        assert_eq!(perturb(&s, noise, 11).unwrap(), (d, n));
    }
}

//! Pinhole camera model and the conversions between depth and the
//! (surface normal, plane-to-origin distance) representation.
//!
//! A pixel `p = (u, v)` with depth `D` back-projects to `P = D K^-1 (u, v, 1)`.
//! A plane with unit normal `N` and distance `d` satisfies `N . P = d`, so
//! along the pixel ray the depth is `d / (N . K^-1 p~)`.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, DistanceMap, Grid, NormalMap, ValidMap};
use crate::tensor::{Shape, Tensor};

/// Below this `|N . K^-1 p~|` the normal-distance depth is treated as singular.
pub const DEFAULT_TAU_DEN: f64 = 1e-6;
pub const DEFAULT_NORMAL_WINDOW: usize = 5;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::Domain(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::Domain("principal point must be finite".into()));
        }
        Ok(Intrinsics { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// `K^-1 (u, v, 1)`: the viewing ray through a pixel, with unit z.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Intrinsics of the same camera resampled by `1 / factor` with
    /// half-pixel-centred sampling.
    pub fn downscaled(&self, factor: f64) -> Intrinsics {
        Intrinsics {
            fx: self.fx / factor,
            fy: self.fy / factor,
            cx: (self.cx + 0.5) / factor - 0.5,
            cy: (self.cy + 0.5) / factor - 0.5,
        }
    }

    /// Viewing rays of a `height x width` image as a `3 x H x W` tensor.
    pub fn ray_tensor(&self, width: usize, height: usize) -> Tensor {
        Tensor::from_fn(Shape::new(3, height, width), |c, y, x| {
            self.ray(x as f64, y as f64)[c]
        })
    }
}

/// Back-projects a pixel at the given depth into camera coordinates.
pub fn backproject(u: f64, v: f64, depth: f64, k: &Intrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::Domain(format!("depth must be positive, got {depth}")));
    }
    Ok(k.ray(u, v) * depth)
}

fn check_dims(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

/// Depth from normal and distance, `D = d / (N . K^-1 p~)`.
///
/// Pixels whose denominator magnitude is below `tau_den`, or whose depth would
/// not be strictly positive, come out invalid.
pub fn depth_from_normal_distance(
    normals: &NormalMap,
    distance: &DistanceMap,
    k: &Intrinsics,
    tau_den: f64,
) -> Result<DepthMap> {
    check_dims("depth_from_normal_distance", normals.dims(), distance.dims())?;
    let (w, h) = normals.dims();
    let mut valid = Grid::filled(w, h, false);
    let values = Grid::from_fn(w, h, |x, y| {
        let (Some(n), Some(d)) = (normals.at(x, y), distance.at(x, y)) else {
            return 0.0;
        };
        let den = n.dot(&k.ray(x as f64, y as f64));
        if den.abs() < tau_den {
            return 0.0;
        }
        let depth = d / den;
        if depth > 0.0 && depth.is_finite() {
            *valid.get_mut(x, y) = true;
            depth
        } else {
            0.0
        }
    });
    ValidMap::new(values, valid)
}

/// Plane-to-origin distance `d = N . (D K^-1 p~)` per pixel.
pub fn distance_from_depth_normal(
    depth: &DepthMap,
    normals: &NormalMap,
    k: &Intrinsics,
) -> Result<DistanceMap> {
    check_dims("distance_from_depth_normal", depth.dims(), normals.dims())?;
    let (w, h) = depth.dims();
    let mut valid = Grid::filled(w, h, false);
    let values = Grid::from_fn(w, h, |x, y| match (depth.at(x, y), normals.at(x, y)) {
        (Some(d), Some(n)) if *d > 0.0 => {
            *valid.get_mut(x, y) = true;
            n.dot(&(k.ray(x as f64, y as f64) * *d))
        }
        _ => 0.0,
    });
    ValidMap::new(values, valid)
}

/// Surface normals by a total-least-squares plane fit over the back-projected
/// points of a `window x window` neighbourhood.
///
/// The normal is the eigenvector of the smallest eigenvalue of the centred
/// point covariance, oriented so that `N . P > 0` at the centre pixel. Pixels
/// whose window leaves the image, touches an invalid depth, or is
/// rank-deficient (collinear points) are invalid.
pub fn normal_from_depth(depth: &DepthMap, k: &Intrinsics, window: usize) -> Result<NormalMap> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Domain(format!(
            "normal window must be odd and >= 3, got {window}"
        )));
    }
    let (w, h) = depth.dims();
    let r = window / 2;
    let points = Grid::from_fn(w, h, |x, y| {
        depth
            .at(x, y)
            .map(|d| k.ray(x as f64, y as f64) * *d)
    });
    let mut valid = Grid::filled(w, h, false);
    let mut values = Grid::filled(w, h, Vector3::zeros());
    if w < window || h < window {
        return ValidMap::new(values, valid);
    }
    let n_pts = (window * window) as f64;
    let mut window_pts = Vec::with_capacity(window * window);
    for y in r..h - r {
        'pixel: for x in r..w - r {
            window_pts.clear();
            for yy in y - r..=y + r {
                for xx in x - r..=x + r {
                    match points.get(xx, yy) {
                        Some(p) => window_pts.push(*p),
                        None => continue 'pixel,
                    }
                }
            }
            let centroid = window_pts.iter().fold(Vector3::zeros(), |a, p| a + p) / n_pts;
            let mut cov = Matrix3::zeros();
            for p in &window_pts {
                let q = p - centroid;
                cov += q * q.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let mut order = [0usize, 1, 2];
            order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
            let (l1, l2) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
            if !(l2 > 0.0) || l1 <= 1e-12 * l2 {
                continue;
            }
            let mut n: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
            n /= n.norm();
            // the solver leaves ~1e-10 rad of error; polish against the other eigenpairs
            for _ in 0..2 {
                let rayleigh = n.dot(&(cov * n));
                let residual = cov * n - n * rayleigh;
                for j in [order[1], order[2]] {
                    let e = eig.eigenvectors.column(j);
                    n -= e * (e.dot(&residual) / (eig.eigenvalues[j] - rayleigh));
                }
                n /= n.norm();
            }
            let centre = points.get(x, y).expect("centre is inside the window");
            let side = n.dot(&centre);
            if side == 0.0 {
                continue;
            }
            if side < 0.0 {
                n = -n;
            }
            *values.get_mut(x, y) = n;
            *valid.get_mut(x, y) = true;
        }
    }
    ValidMap::new(values, valid)
}

/// 3D points with optional 8-bit RGB colours.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One back-projected point per valid pixel, in row-major order. Colours are
/// taken from an RGB image with channels in `[0, 1]`.
pub fn pointcloud_from_depth(
    depth: &DepthMap,
    k: &Intrinsics,
    color: Option<&Grid<[f64; 3]>>,
) -> Result<PointCloud> {
    if let Some(c) = color {
        check_dims("pointcloud_from_depth", depth.dims(), c.dims())?;
    }
    let (w, h) = depth.dims();
    let mut points = Vec::new();
    let mut colors = color.map(|_| Vec::new());
    for y in 0..h {
        for x in 0..w {
            let Some(d) = depth.at(x, y) else { continue };
            points.push(backproject(x as f64, y as f64, *d, k)?);
            if let (Some(out), Some(img)) = (colors.as_mut(), color) {
                let rgb = img.get(x, y);
                out.push(rgb.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
            }
        }
    }
    Ok(PointCloud { points, colors })
}

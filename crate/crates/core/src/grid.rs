//! Dense row-major rasters and the validity-masked maps built on them.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Dense `height x width` raster stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                "Grid::from_vec",
                format!("{} values for a {width}x{height} grid", data.len()),
            ));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

pub type Mask = Grid<bool>;

/// A raster whose entries are only meaningful where `valid` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidMap<T> {
    pub values: Grid<T>,
    pub valid: Mask,
}

/// Depths in meters; valid entries are strictly positive and finite.
pub type DepthMap = ValidMap<f64>;
/// Plane-to-origin distances in meters.
pub type DistanceMap = ValidMap<f64>;
/// Unit surface normals.
pub type NormalMap = ValidMap<Vector3<f64>>;

impl<T> ValidMap<T> {
    pub fn new(values: Grid<T>, valid: Mask) -> Result<Self> {
        if !values.same_dims(&valid) {
            return Err(Error::shape(
                "ValidMap::new",
                format!(
                    "values {:?} vs mask {:?}",
                    values.dims(),
                    valid.dims()
                ),
            ));
        }
        Ok(ValidMap { values, valid })
    }

    pub fn all_valid(values: Grid<T>) -> Self {
        let valid = Grid::filled(values.width(), values.height(), true);
        ValidMap { values, valid }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.values.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.values.height()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        *self.valid.get(x, y)
    }

    pub fn at(&self, x: usize, y: usize) -> Option<&T> {
        if self.is_valid(x, y) {
            Some(self.values.get(x, y))
        } else {
            None
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.as_slice().iter().filter(|v| **v).count()
    }
}

impl ValidMap<f64> {
    /// Builds a scalar map marking non-finite or non-positive entries invalid.
    pub fn from_positive(values: Grid<f64>) -> Self {
        let valid = values.map(|v| v.is_finite() && *v > 0.0);
        ValidMap { values, valid }
    }

    /// Values with invalid entries replaced by zero, the on-disk convention.
    pub fn zero_filled(&self) -> Grid<f64> {
        let mut out = self.values.clone();
        for (v, ok) in out.as_mut_slice().iter_mut().zip(self.valid.as_slice()) {
            if !ok {
                *v = 0.0;
            }
        }
        out
    }
}

impl ValidMap<Vector3<f64>> {
    /// Builds a normal map from raw vectors: zero or non-finite vectors are
    /// invalid, the rest are re-normalized.
    pub fn from_raw_normals(values: Grid<Vector3<f64>>) -> Self {
        let valid = values.map(|n| n.iter().all(|c| c.is_finite()) && n.norm() > 1e-12);
        let values = values.map(|n| {
            let norm = n.norm();
            if norm > 1e-12 && norm.is_finite() {
                n / norm
            } else {
                Vector3::zeros()
            }
        });
        ValidMap { values, valid }
    }

    pub fn zero_filled(&self) -> Grid<Vector3<f64>> {
        let mut out = self.values.clone();
        for (v, ok) in out.as_mut_slice().iter_mut().zip(self.valid.as_slice()) {
            if !ok {
                *v = Vector3::zeros();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_indexing() {
        let g = Grid::from_fn(3, 2, |x, y| 10 * y + x);
        assert_eq!(*g.get(2, 1), 12);
        assert_eq!(g.index(2, 1), 5);
        assert_eq!(g.as_slice(), &[0, 1, 2, 10, 11, 12]);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Grid::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn positive_validity() {
        let g = Grid::from_vec(4, 1, vec![1.0, 0.0, -1.0, f64::NAN]).unwrap();
        let m = DepthMap::from_positive(g);
        assert_eq!(m.valid.as_slice(), &[true, false, false, false]);
        assert_eq!(m.zero_filled().as_slice()[3], 0.0);
    }

    #[test]
    fn raw_normals_are_normalized() {
        let g = Grid::from_vec(2, 1, vec![Vector3::new(0.0, 3.0, 4.0), Vector3::zeros()]).unwrap();
        let n = NormalMap::from_raw_normals(g);
        assert!((n.values.get(0, 0).norm() - 1.0).abs() < 1e-15);
        assert!(!n.is_valid(1, 0));
    }
}

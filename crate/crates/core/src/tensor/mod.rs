//! Dense `C x H x W` tensors, a static-tape reverse-mode differentiator over
//! the handful of ops the losses and refinement need, and a central-difference
//! gradient checker.

mod conv;
pub mod gradcheck;
mod resize;
mod tape;

pub use conv::{PointwiseWeights, SepConvVars, SepConvWeights, SEP_KERNEL};
pub use gradcheck::{finite_diff_check, finite_diff_check_inputs, DEFAULT_EPS};
pub use resize::{bilinear_resize_tensor, BilinearTaps};
pub use tape::{Activation, DiffTensor, Tape, Var};

use nalgebra::Vector3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape {
        channels: 1,
        height: 1,
        width: 1,
    };

    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Pixels per channel.
    #[inline]
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn with_channels(&self, channels: usize) -> Self {
        Shape { channels, ..*self }
    }

    pub fn same_spatial(&self, other: &Shape) -> bool {
        self.height == other.height && self.width == other.width
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Channel-major 64-bit tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape::SCALAR,
            data: vec![value],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("{} values for shape {shape}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(c, y, x));
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn random_uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor { shape, data }
    }

    /// Single-channel tensor from a scalar grid.
    pub fn from_grid(grid: &Grid<f64>) -> Self {
        Tensor {
            shape: Shape::new(1, grid.height(), grid.width()),
            data: grid.as_slice().to_vec(),
        }
    }

    /// Three-channel tensor from a vector grid.
    pub fn from_vector_grid(grid: &Grid<Vector3<f64>>) -> Self {
        let shape = Shape::new(3, grid.height(), grid.width());
        let plane = shape.plane();
        let mut data = vec![0.0; shape.numel()];
        for (p, v) in grid.as_slice().iter().enumerate() {
            for c in 0..3 {
                data[c * plane + p] = v[c];
            }
        }
        Tensor { shape, data }
    }

    pub fn channel_grid(&self, channel: usize) -> Grid<f64> {
        let plane = self.shape.plane();
        Grid::from_vec(
            self.shape.width,
            self.shape.height,
            self.data[channel * plane..(channel + 1) * plane].to_vec(),
        )
        .expect("channel slice matches plane size")
    }

    pub fn vector_grid(&self) -> Result<Grid<Vector3<f64>>> {
        if self.shape.channels != 3 {
            return Err(Error::shape(
                "Tensor::vector_grid",
                format!("expected 3 channels, got {}", self.shape),
            ));
        }
        let plane = self.shape.plane();
        Ok(Grid::from_fn(self.shape.width, self.shape.height, |x, y| {
            let p = y * self.shape.width + x;
            Vector3::new(self.data[p], self.data[plane + p], self.data[2 * plane + p])
        }))
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.shape.height + y) * self.shape.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.shape.height + y) * self.shape.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    /// The single entry of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

//! Shared inputs for the pipeline benchmarks.

use nddepth_core::synthetic::generate;
use nddepth_core::{PlanarScene, SceneSpec, Shape, Tensor};

/// The three-plane scene rendered at `width` x `height`.
pub fn three_plane(width: usize, height: usize) -> PlanarScene {
    generate(&SceneSpec::three_plane(width, height), 0).expect("valid scene")
}

/// Deterministic, smoothly varying values in `[-1, 1]`.
pub fn wave(shape: Shape, phase: f64) -> Tensor {
    let data = (0..shape.numel()).map(|i| (0.37 * i as f64 + phase).sin()).collect();
    Tensor::from_vec(shape, data).expect("matching length")
}

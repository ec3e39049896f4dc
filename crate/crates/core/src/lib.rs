//! Geometry and learning primitives for monocular depth estimation with a
//! piecewise-planar prior.
//!
//! Depth relates to a plane's normal `N` and distance `d` to the camera
//! through `D = d / (N . K^-1 p)`. This crate converts between the two
//! representations, detects planar regions on a normal/distance
//! dissimilarity graph, provides the training objectives with reverse-mode
//! gradients, a recurrent refinement engine, the usual depth metrics, and
//! file formats for all of it. Synthetic planar scenes serve as exact
//! oracles throughout.

pub mod camera;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod io;
pub mod kv;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod refinement;
pub mod segmentation;
pub mod synthetic;
pub mod tensor;

pub use nalgebra::Vector3;
pub use camera::{
    depth_from_normal_distance, distance_from_depth_normal, normal_from_depth,
    pointcloud_from_depth, Intrinsics, PointCloud,
};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use grid::{DepthMap, DistanceMap, Grid, Mask, NormalMap, ValidMap};
pub use losses::{LossWeights, Reduction};
pub use metrics::{evaluate, Cap, MetricReport};
pub use refinement::{RefinementConfig, RefinementWeights};
pub use segmentation::{PlaneMask, SegmentLabels, SegmentationParams};
pub use synthetic::{PlanarScene, SceneSpec};
pub use tensor::{DiffTensor, SepConvWeights, Shape, Tape, Tensor, Var};

//! Meshes, occupancy supervision, point sampling and isosurface extraction.

mod grid;
mod io;
mod marching_cubes;
mod mc_tables;
mod mesh;
pub mod procedural;
mod sampling;
mod winding;

use thiserror::Error;

pub use grid::{lattice_points, ScalarFieldGrid};
pub use io::{load_mesh, parse_obj, parse_off, save_obj, save_off, to_obj, to_off};
pub use marching_cubes::marching_cubes;
pub use mesh::TriangleMesh;
pub use sampling::{
    frame_time, grid_supervision, label_points, sample_supervision_3d, sample_supervision_4d,
    sample_surface_points, LabeledPointBatch, OCCUPANCY_THRESHOLD,
};
pub use winding::{
    solid_angle_sum, triangle_solid_angle, winding_number, winding_numbers, SolidAngleSum,
};

pub type Point3 = [f32; 3];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: face with {vertices} vertices cannot be triangulated")]
    NonTriangulableFace { line: usize, vertices: usize },
    #[error("triangle {triangle} references a vertex outside 0..{vertex_count}")]
    IndexOutOfRange {
        triangle: usize,
        vertex_count: usize,
    },
    #[error("triangle {0} repeats a vertex index")]
    DegenerateTriangle(usize),
    #[error("mesh has no vertices")]
    EmptyMesh,
    #[error("mesh has zero extent")]
    ZeroExtent,
    #[error("mesh has zero surface area")]
    ZeroArea,
    #[error("point dimension must be 3 or 4, got {0}")]
    InvalidDimension(usize),
    #[error("{points} points but {labels} labels")]
    LabelCountMismatch { points: usize, labels: usize },
    #[error("occupancy labels must be 0 or 1")]
    NonBinaryLabel,
    #[error("invalid near-surface sigma {0}")]
    InvalidSigma(f32),
    #[error("frame list is empty")]
    NoFrames,
    #[error("grid resolution must be at least 2 per axis, got {0:?}")]
    InvalidResolution([usize; 3]),
    #[error("grid has {actual} samples, expected {expected}")]
    SampleCountMismatch { expected: usize, actual: usize },
}

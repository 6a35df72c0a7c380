//! Weight-space diffusion over occupancy-field MLPs.
//!
//! Each training shape is overfit by its own small occupancy MLP; the flattened
//! MLP weights form the dataset of a transformer diffusion model. Sampling that
//! model yields new MLPs, which are turned back into meshes with marching
//! cubes and scored against reference shapes.

pub mod field_mlp;
pub mod geometry;
pub mod metrics;
pub mod numerics;
pub mod weight_diffusion;

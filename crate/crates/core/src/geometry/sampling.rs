//! Point sampling: surface samples for metrics and labeled occupancy supervision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::grid::lattice_points;
use super::winding::winding_number;
use super::{GeometryError, Point3, TriangleMesh};

/// Winding-number threshold separating inside from outside.
pub const OCCUPANCY_THRESHOLD: f64 = 0.5;

/// Points of dimension 3 (space) or 4 (space + time) with binary occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointBatch {
    dim: usize,
    points: Vec<f32>,
    labels: Vec<u8>,
}

impl LabeledPointBatch {
    pub fn new(dim: usize, points: Vec<f32>, labels: Vec<u8>) -> Result<Self, GeometryError> {
        if dim != 3 && dim != 4 {
            return Err(GeometryError::InvalidDimension(dim));
        }
        if points.len() != labels.len() * dim {
            return Err(GeometryError::LabelCountMismatch {
                points: points.len() / dim,
                labels: labels.len(),
            });
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(GeometryError::NonBinaryLabel);
        }
        Ok(Self {
            dim,
            points,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Flat coordinates, `dim` values per point.
    pub fn points(&self) -> &[f32] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f32] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn inside_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().map(|&l| l as f64).sum::<f64>() / self.labels.len() as f64
    }

    /// Concatenates batches of the same dimension.
    pub fn concat(parts: Vec<LabeledPointBatch>) -> Result<Self, GeometryError> {
        let dim = parts.first().map_or(3, |p| p.dim);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim != dim {
                return Err(GeometryError::InvalidDimension(p.dim));
            }
            points.extend(p.points);
            labels.extend(p.labels);
        }
        Self::new(dim, points, labels)
    }
}

fn area_table(mesh: &TriangleMesh) -> Result<Vec<f64>, GeometryError> {
    let mut acc = 0.0;
    let cumulative: Vec<f64> = (0..mesh.triangles().len())
        .map(|i| {
            acc += mesh.triangle_area(i);
            acc
        })
        .collect();
    if !(acc > 0.0) {
        return Err(GeometryError::ZeroArea);
    }
    Ok(cumulative)
}

fn draw_surface_point(mesh: &TriangleMesh, cumulative: &[f64], rng: &mut ChaCha8Rng) -> Point3 {
    let total = *cumulative.last().expect("non-empty area table");
    let target = rng.random::<f64>() * total;
    let tri = cumulative
        .partition_point(|&c| c <= target)
        .min(cumulative.len() - 1);
    let [a, b, c] = mesh.triangle(tri);
    let (r1, r2): (f64, f64) = (rng.random(), rng.random());
    let s = r1.sqrt();
    let (u, v, w) = (1.0 - s, s * (1.0 - r2), s * r2);
    std::array::from_fn(|k| (u * a[k] as f64 + v * b[k] as f64 + w * c[k] as f64) as f32)
}

/// `k` area-weighted, barycentric-uniform surface points.
pub fn sample_surface_points(
    mesh: &TriangleMesh,
    k: usize,
    seed: u64,
) -> Result<Vec<Point3>, GeometryError> {
    let cumulative = area_table(mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..k)
        .map(|_| draw_surface_point(mesh, &cumulative, &mut rng))
        .collect())
}

/// Occupancy labels (`1` iff winding number > 0.5), parallel over points.
pub fn label_points(mesh: &TriangleMesh, points: &[Point3]) -> Vec<u8> {
    points
        .par_iter()
        .map(|&p| u8::from(winding_number(mesh, p) > OCCUPANCY_THRESHOLD))
        .collect()
}

fn supervision_points(
    mesh: &TriangleMesh,
    n_uniform: usize,
    n_near: usize,
    near_sigma: f32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Point3>, GeometryError> {
    let mut points: Vec<Point3> = (0..n_uniform)
        .map(|_| std::array::from_fn(|_| rng.random::<f32>() - 0.5))
        .collect();
    if n_near > 0 {
        let cumulative = area_table(mesh)?;
        let noise =
            Normal::new(0.0f32, near_sigma).map_err(|_| GeometryError::InvalidSigma(near_sigma))?;
        for _ in 0..n_near {
            let p = draw_surface_point(mesh, &cumulative, rng);
            points.push(std::array::from_fn(|k| p[k] + noise.sample(rng)));
        }
    }
    Ok(points)
}

/// Uniform points in `[-0.5, 0.5]^3` plus Gaussian-perturbed surface points,
/// labeled by winding number.
pub fn sample_supervision_3d(
    mesh: &TriangleMesh,
    n_uniform: usize,
    n_near: usize,
    near_sigma: f32,
    seed: u64,
) -> Result<LabeledPointBatch, GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = supervision_points(mesh, n_uniform, n_near, near_sigma, &mut rng)?;
    let labels = label_points(mesh, &points);
    LabeledPointBatch::new(3, points.into_iter().flatten().collect(), labels)
}

/// Time coordinate of frame `index` out of `frames`, spread over `[-0.5, 0.5]`.
pub fn frame_time(index: usize, frames: usize) -> f32 {
    if frames <= 1 {
        -0.5
    } else {
        -0.5 + index as f32 / (frames - 1) as f32
    }
}

/// Per-frame 3D supervision (half uniform, half near-surface) with the frame
/// time appended as a fourth coordinate.
pub fn sample_supervision_4d(
    frames: &[TriangleMesh],
    n_per_frame: usize,
    near_sigma: f32,
    seed: u64,
) -> Result<LabeledPointBatch, GeometryError> {
    if frames.is_empty() {
        return Err(GeometryError::NoFrames);
    }
    let n_uniform = n_per_frame / 2;
    let n_near = n_per_frame - n_uniform;
    let mut points = Vec::with_capacity(frames.len() * n_per_frame * 4);
    let mut labels = Vec::with_capacity(frames.len() * n_per_frame);
    for (i, mesh) in frames.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let frame_points = supervision_points(mesh, n_uniform, n_near, near_sigma, &mut rng)?;
        labels.extend(label_points(mesh, &frame_points));
        let t = frame_time(i, frames.len());
        for p in frame_points {
            points.extend_from_slice(&[p[0], p[1], p[2], t]);
        }
    }
    LabeledPointBatch::new(4, points, labels)
}

/// Lattice of `resolution^3` points over `[-0.5, 0.5]^3` labeled by `inside`.
pub fn grid_supervision(
    resolution: usize,
    time: Option<f32>,
    inside: impl Fn(Point3) -> bool + Sync,
) -> LabeledPointBatch {
    let lattice = lattice_points(resolution);
    let labels: Vec<u8> = lattice.par_iter().map(|&p| u8::from(inside(p))).collect();
    let (dim, points) = match time {
        None => (3, lattice.into_iter().flatten().collect()),
        Some(t) => (
            4,
            lattice
                .into_iter()
                .flat_map(|p| [p[0], p[1], p[2], t])
                .collect(),
        ),
    };
    LabeledPointBatch::new(dim, points, labels).expect("lattice batch is consistent")
}

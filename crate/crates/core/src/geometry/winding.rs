//! Generalized winding numbers by direct summation of triangle solid angles.

use std::ops::{Add, AddAssign, Range};

use rayon::prelude::*;

use super::{Point3, TriangleMesh};

/// Solid angles are summed in 2^-60 fixed point so that partial sums over any
/// partition of the triangles add up to the full sum bit for bit.
const FIXED_SCALE: f64 = (1u64 << 60) as f64;

/// Exact accumulator of signed solid angles (steradians).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolidAngleSum(i128);

impl SolidAngleSum {
    pub fn from_steradians(omega: f64) -> Self {
        Self((omega * FIXED_SCALE).round() as i128)
    }

    pub fn steradians(self) -> f64 {
        self.0 as f64 / FIXED_SCALE
    }

    pub fn winding_number(self) -> f64 {
        self.steradians() / (4.0 * std::f64::consts::PI)
    }
}

impl Add for SolidAngleSum {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl AddAssign for SolidAngleSum {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

/// Signed solid angle of triangle `abc` seen from `q` (Van Oosterom–Strackee).
/// Finite for every query, including points on the triangle.
pub fn triangle_solid_angle(tri: [Point3; 3], q: Point3) -> f64 {
    let r: [[f64; 3]; 3] =
        std::array::from_fn(|i| std::array::from_fn(|k| tri[i][k] as f64 - q[k] as f64));
    let len: [f64; 3] = std::array::from_fn(|i| dot(r[i], r[i]).sqrt());
    let numerator = dot(r[0], cross(r[1], r[2]));
    let denominator = len[0] * len[1] * len[2]
        + dot(r[0], r[1]) * len[2]
        + dot(r[0], r[2]) * len[1]
        + dot(r[1], r[2]) * len[0];
    2.0 * numerator.atan2(denominator)
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(u: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ]
}

/// Solid-angle sum over the triangles in `range`.
pub fn solid_angle_sum(mesh: &TriangleMesh, range: Range<usize>, q: Point3) -> SolidAngleSum {
    range.fold(SolidAngleSum::default(), |acc, i| {
        acc + SolidAngleSum::from_steradians(triangle_solid_angle(mesh.triangle(i), q))
    })
}

/// Winding number of `q`: ~1 inside a closed outward-oriented surface, ~0 outside.
pub fn winding_number(mesh: &TriangleMesh, q: Point3) -> f64 {
    solid_angle_sum(mesh, 0..mesh.triangles().len(), q).winding_number()
}

/// Winding numbers for many queries, parallel over the queries.
pub fn winding_numbers(mesh: &TriangleMesh, queries: &[Point3]) -> Vec<f64> {
    queries
        .par_iter()
        .map(|&q| winding_number(mesh, q))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::procedural;

    #[test]
    fn closed_cube_inside_and_outside() {
        let cube = procedural::box_mesh([0.0; 3], [1.0; 3]);
        assert!((winding_number(&cube, [0.0; 3]) - 1.0).abs() < 1e-4);
        assert!(winding_number(&cube, [10.0, 0.0, 0.0]).abs() < 1e-4);
        assert!((winding_number(&cube.flipped(), [0.0; 3]) + 1.0).abs() < 1e-4);
    }

    #[test]
    fn on_surface_query_is_finite() {
        let cube = procedural::box_mesh([0.0; 3], [1.0; 3]);
        for q in [[0.5, 0.0, 0.0], [0.5, 0.5, 0.5], [0.5, 0.5, 0.0]] {
            assert!(winding_number(&cube, q).is_finite());
        }
    }

    #[test]
    fn partition_sums_are_exact() {
        let mesh = procedural::icosphere([0.1, 0.0, 0.0], 0.3, 2);
        let n = mesh.triangles().len();
        for q in [[0.0f32, 0.05, 0.1], [0.4, -0.3, 0.2], [0.39, 0.0, 0.0]] {
            let full = solid_angle_sum(&mesh, 0..n, q);
            for split in [1, n / 3, n / 2, n - 1] {
                let parts =
                    solid_angle_sum(&mesh, 0..split, q) + solid_angle_sum(&mesh, split..n, q);
                assert_eq!(parts, full);
            }
        }
    }
}

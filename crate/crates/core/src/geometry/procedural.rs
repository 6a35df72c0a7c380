//! Closed procedural shapes with analytic occupancy, and simple animations of them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Point3, TriangleMesh};

/// Analytic solid with a matching closed, outward-oriented triangle mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere {
        center: [f32; 3],
        radius: f32,
    },
    Ellipsoid {
        center: [f32; 3],
        axes: [f32; 3],
    },
    Box {
        center: [f32; 3],
        size: [f32; 3],
    },
    Torus {
        center: [f32; 3],
        major: f32,
        minor: f32,
    },
}

impl Shape {
    /// Analytic inside test.
    pub fn contains(&self, p: Point3) -> bool {
        let d = |c: [f32; 3]| -> [f64; 3] { std::array::from_fn(|k| p[k] as f64 - c[k] as f64) };
        match *self {
            Shape::Sphere { center, radius } => {
                let v = d(center);
                v[0] * v[0] + v[1] * v[1] + v[2] * v[2] < (radius as f64).powi(2)
            }
            Shape::Ellipsoid { center, axes } => {
                let v = d(center);
                (0..3).map(|k| (v[k] / axes[k] as f64).powi(2)).sum::<f64>() < 1.0
            }
            Shape::Box { center, size } => {
                let v = d(center);
                (0..3).all(|k| v[k].abs() < 0.5 * size[k] as f64)
            }
            Shape::Torus {
                center,
                major,
                minor,
            } => {
                let v = d(center);
                let ring = (v[0] * v[0] + v[1] * v[1]).sqrt() - major as f64;
                ring * ring + v[2] * v[2] < (minor as f64).powi(2)
            }
        }
    }

    /// Mesh with a fixed tessellation density.
    pub fn mesh(&self) -> TriangleMesh {
        match *self {
            Shape::Sphere { center, radius } => icosphere(center, radius, 3),
            Shape::Ellipsoid { center, axes } => ellipsoid_mesh(center, axes, 3),
            Shape::Box { center, size } => box_mesh(center, size),
            Shape::Torus {
                center,
                major,
                minor,
            } => torus_mesh(center, major, minor, 48, 24),
        }
    }
}

fn unit_icosphere(subdivisions: u32) -> (Vec<[f64; 3]>, Vec<[u32; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<[f64; 3]> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let normalize = |v: [f64; 3]| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    };
    for v in &mut vertices {
        *v = normalize(*v);
    }
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<[f64; 3]>| -> u32 {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (p, q) = (vertices[a as usize], vertices[b as usize]);
                vertices.push(normalize([
                    0.5 * (p[0] + q[0]),
                    0.5 * (p[1] + q[1]),
                    0.5 * (p[2] + q[2]),
                ]));
                (vertices.len() - 1) as u32
            })
        };
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (vertices, faces)
}

/// Geodesic sphere: the icosahedron subdivided `subdivisions` times.
pub fn icosphere(center: [f32; 3], radius: f32, subdivisions: u32) -> TriangleMesh {
    ellipsoid_mesh(center, [radius; 3], subdivisions)
}

/// Axis-aligned ellipsoid obtained by scaling an icosphere.
pub fn ellipsoid_mesh(center: [f32; 3], axes: [f32; 3], subdivisions: u32) -> TriangleMesh {
    let (unit, faces) = unit_icosphere(subdivisions);
    let vertices = unit
        .iter()
        .map(|v| std::array::from_fn(|k| (center[k] as f64 + axes[k] as f64 * v[k]) as f32))
        .collect();
    TriangleMesh::new(vertices, faces).expect("icosphere topology is valid")
}

/// Axis-aligned box with full edge lengths `size`.
pub fn box_mesh(center: [f32; 3], size: [f32; 3]) -> TriangleMesh {
    let vertices: Vec<Point3> = (0..8)
        .map(|i| {
            std::array::from_fn(|k| {
                let sign = if (i >> k) & 1 == 1 { 0.5 } else { -0.5 };
                center[k] + sign * size[k]
            })
        })
        .collect();
    // Quads listed counter-clockwise seen from outside; corner i has bit k set
    // when it lies on the + side of axis k.
    let quads = [
        [0, 4, 6, 2],
        [1, 3, 7, 5],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 2, 3, 1],
        [4, 5, 7, 6],
    ];
    let triangles = quads
        .iter()
        .flat_map(|&[a, b, c, d]| [[a, b, c], [a, c, d]])
        .collect();
    TriangleMesh::new(vertices, triangles).expect("box topology is valid")
}

/// Torus around the z axis.
pub fn torus_mesh(
    center: [f32; 3],
    major: f32,
    minor: f32,
    ring_segments: u32,
    tube_segments: u32,
) -> TriangleMesh {
    let (nu, nv) = (ring_segments, tube_segments);
    let mut vertices = Vec::with_capacity((nu * nv) as usize);
    for i in 0..nu {
        let u = 2.0 * std::f64::consts::PI * i as f64 / nu as f64;
        for j in 0..nv {
            let v = 2.0 * std::f64::consts::PI * j as f64 / nv as f64;
            let ring = major as f64 + minor as f64 * v.cos();
            vertices.push([
                center[0] + (ring * u.cos()) as f32,
                center[1] + (ring * u.sin()) as f32,
                center[2] + (minor as f64 * v.sin()) as f32,
            ]);
        }
    }
    let idx = |i: u32, j: u32| (i % nu) * nv + (j % nv);
    let mut triangles = Vec::with_capacity((2 * nu * nv) as usize);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    TriangleMesh::new(vertices, triangles).expect("torus topology is valid")
}

/// Procedural 4D sequence: a shape evaluated at normalized time `s ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Animation {
    /// Sphere moving on a straight line.
    TranslatingSphere {
        start: [f32; 3],
        end: [f32; 3],
        radius: f32,
    },
    /// Sphere whose radius changes linearly.
    ScalingSphere {
        center: [f32; 3],
        start_radius: f32,
        end_radius: f32,
    },
    /// Ellipsoid whose axes oscillate by `amplitude` (relative) over one period.
    OscillatingEllipsoid {
        center: [f32; 3],
        axes: [f32; 3],
        amplitude: f32,
    },
    /// A shape that does not move.
    Static { shape: Shape },
}

impl Animation {
    pub fn at(&self, s: f32) -> Shape {
        let lerp = |a: f32, b: f32| a + (b - a) * s;
        match *self {
            Animation::TranslatingSphere { start, end, radius } => Shape::Sphere {
                center: std::array::from_fn(|k| lerp(start[k], end[k])),
                radius,
            },
            Animation::ScalingSphere {
                center,
                start_radius,
                end_radius,
            } => Shape::Sphere {
                center,
                radius: lerp(start_radius, end_radius),
            },
            Animation::OscillatingEllipsoid {
                center,
                axes,
                amplitude,
            } => {
                let phase = (2.0 * std::f64::consts::PI * s as f64).sin() as f32;
                let k = 1.0 + amplitude * phase;
                Shape::Ellipsoid {
                    center,
                    axes: [axes[0] * k, axes[1] / k, axes[2]],
                }
            }
            Animation::Static { shape } => shape,
        }
    }

    /// Shapes for `frames` evenly spaced times in `[0, 1]`.
    pub fn frames(&self, frames: usize) -> Vec<Shape> {
        (0..frames)
            .map(|i| {
                let s = if frames > 1 {
                    i as f32 / (frames - 1) as f32
                } else {
                    0.0
                };
                self.at(s)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::winding::winding_number;

    #[test]
    fn meshes_are_closed_and_outward() {
        let shapes = [
            Shape::Sphere {
                center: [0.0; 3],
                radius: 0.3,
            },
            Shape::Ellipsoid {
                center: [0.05, 0.0, 0.0],
                axes: [0.3, 0.2, 0.1],
            },
            Shape::Box {
                center: [0.0; 3],
                size: [0.4, 0.3, 0.2],
            },
            Shape::Torus {
                center: [0.0; 3],
                major: 0.25,
                minor: 0.1,
            },
        ];
        for shape in shapes {
            let mesh = shape.mesh();
            assert!(mesh.is_watertight(), "{shape:?}");
            let inside = match shape {
                Shape::Torus { major, .. } => [major, 0.0, 0.0],
                Shape::Ellipsoid { center, .. } => center,
                _ => [0.0; 3],
            };
            assert!(shape.contains(inside));
            assert!(
                (winding_number(&mesh, inside) - 1.0).abs() < 1e-4,
                "{shape:?}"
            );
            assert!(winding_number(&mesh, [0.0, 0.0, 0.45]).abs() < 1e-4);
        }
    }

    #[test]
    fn icosphere_counts() {
        let m = icosphere([0.0; 3], 1.0, 2);
        assert_eq!(m.triangles().len(), 320);
        assert_eq!(m.vertices().len(), 162);
    }

    #[test]
    fn animation_frames_span_endpoints() {
        let anim = Animation::TranslatingSphere {
            start: [-0.1, 0.0, 0.0],
            end: [0.1, 0.0, 0.0],
            radius: 0.2,
        };
        let frames = anim.frames(16);
        assert_eq!(frames.len(), 16);
        assert_eq!(frames[0], anim.at(0.0));
        assert_eq!(frames[15], anim.at(1.0));
        assert_eq!(anim.frames(1), vec![anim.at(0.0)]);
    }
}

use super::{GeometryError, Point3};

/// Indexed triangle surface.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    triangles: Vec<[u32; 3]>,
    pub name: Option<String>,
}

impl TriangleMesh {
    /// Validates indices and rejects triangles that repeat a vertex index.
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v as usize >= n) {
                return Err(GeometryError::IndexOutOfRange {
                    triangle: i,
                    vertex_count: n,
                });
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(GeometryError::DegenerateTriangle(i));
            }
        }
        Ok(Self {
            vertices,
            triangles,
            name: None,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Point3; 3] {
        let [a, b, c] = self.triangles[i];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        let u = sub(b, a);
        let v = sub(c, a);
        let n = cross(u, v);
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| self.triangle_area(i))
            .sum()
    }

    /// Axis-aligned bounds, `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), p| {
            (
                [lo[0].min(p[0]), lo[1].min(p[1]), lo[2].min(p[2])],
                [hi[0].max(p[0]), hi[1].max(p[1]), hi[2].max(p[2])],
            )
        }))
    }

    /// Centers the bounding box at the origin and scales uniformly so the
    /// largest extent is 1, placing the mesh inside `[-0.5, 0.5]^3`.
    pub fn normalize_to_unit_cube(&self) -> Result<Self, GeometryError> {
        let (lo, hi) = self.bounds().ok_or(GeometryError::EmptyMesh)?;
        let extent = (0..3)
            .map(|a| hi[a] as f64 - lo[a] as f64)
            .fold(0.0f64, f64::max);
        if !(extent > 0.0) {
            return Err(GeometryError::ZeroExtent);
        }
        let center: [f64; 3] = std::array::from_fn(|a| 0.5 * (lo[a] as f64 + hi[a] as f64));
        let vertices = self
            .vertices
            .iter()
            .map(|p| {
                std::array::from_fn(|a| {
                    ((p[a] as f64 - center[a]) / extent).clamp(-0.5, 0.5) as f32
                })
            })
            .collect();
        Ok(Self {
            vertices,
            triangles: self.triangles.clone(),
            name: self.name.clone(),
        })
    }

    /// Applies `f` to every vertex position.
    pub fn map_vertices(&self, f: impl Fn(Point3) -> Point3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&p| f(p)).collect(),
            triangles: self.triangles.clone(),
            name: self.name.clone(),
        }
    }

    /// Reverses the orientation of every triangle.
    pub fn flipped(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            name: self.name.clone(),
        }
    }

    /// True when every undirected edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        use std::collections::HashMap;
        if self.triangles.is_empty() {
            return false;
        }
        let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        counts.values().all(|&c| c == 2)
    }
}

pub(crate) fn sub(a: Point3, b: Point3) -> [f64; 3] {
    [
        a[0] as f64 - b[0] as f64,
        a[1] as f64 - b[1] as f64,
        a[2] as f64 - b[2] as f64,
    ]
}

pub(crate) fn cross(u: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ]
}

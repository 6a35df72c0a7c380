use rayon::prelude::*;

use super::{GeometryError, Point3};

/// Scalar samples on a regular lattice spanning `[min, max]` (inclusive) per axis.
/// Sample `(i, j, k)` is stored at `(i * ny + j) * nz + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarFieldGrid {
    resolution: [usize; 3],
    min: Point3,
    max: Point3,
    values: Vec<f32>,
}

impl ScalarFieldGrid {
    pub fn new(
        resolution: [usize; 3],
        min: Point3,
        max: Point3,
        values: Vec<f32>,
    ) -> Result<Self, GeometryError> {
        if resolution.iter().any(|&r| r < 2) {
            return Err(GeometryError::InvalidResolution(resolution));
        }
        let expected = resolution.iter().product();
        if values.len() != expected {
            return Err(GeometryError::SampleCountMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(Self {
            resolution,
            min,
            max,
            values,
        })
    }

    /// Samples `f` at every lattice position, in parallel.
    pub fn from_fn(
        resolution: [usize; 3],
        min: Point3,
        max: Point3,
        f: impl Fn(Point3) -> f32 + Sync,
    ) -> Result<Self, GeometryError> {
        let shell = Self::new(resolution, min, max, vec![0.0; resolution.iter().product()])?;
        let values = (0..shell.values.len())
            .into_par_iter()
            .map(|idx| f(shell.position_of(idx)))
            .collect();
        Ok(Self { values, ..shell })
    }

    /// `resolution^3` samples over `[-0.5, 0.5]^3`, ordered like [`lattice_points`].
    pub fn unit_cube(resolution: usize, values: Vec<f32>) -> Result<Self, GeometryError> {
        Self::new([resolution; 3], [-0.5; 3], [0.5; 3], values)
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn bounds(&self) -> (Point3, Point3) {
        (self.min, self.max)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution[1] + j) * self.resolution[2] + k
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.index(i, j, k)]
    }

    pub fn cell_size(&self) -> [f32; 3] {
        std::array::from_fn(|a| (self.max[a] - self.min[a]) / (self.resolution[a] - 1) as f32)
    }

    pub fn position(&self, i: usize, j: usize, k: usize) -> Point3 {
        let ijk = [i, j, k];
        std::array::from_fn(|a| {
            let s = ijk[a] as f64 / (self.resolution[a] - 1) as f64;
            (self.min[a] as f64 + s * (self.max[a] as f64 - self.min[a] as f64)) as f32
        })
    }

    fn position_of(&self, idx: usize) -> Point3 {
        let [_, ny, nz] = self.resolution;
        self.position(idx / (ny * nz), (idx / nz) % ny, idx % nz)
    }

    /// Smallest and largest sample, `None` if any sample is NaN.
    pub fn value_range(&self) -> Option<(f32, f32)> {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.values {
            if v.is_nan() {
                return None;
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Some((lo, hi))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Surrounds the grid with one layer of `fill` samples, extending the bounds
    /// by one cell, so surfaces touching the boundary get closed.
    pub fn padded(&self, fill: f32) -> Self {
        let [nx, ny, nz] = self.resolution;
        let cell = self.cell_size();
        let resolution = [nx + 2, ny + 2, nz + 2];
        let mut values = vec![fill; resolution.iter().product()];
        for i in 0..nx {
            for j in 0..ny {
                let src = self.index(i, j, 0);
                let dst = ((i + 1) * (ny + 2) + j + 1) * (nz + 2) + 1;
                values[dst..dst + nz].copy_from_slice(&self.values[src..src + nz]);
            }
        }
        Self {
            resolution,
            min: std::array::from_fn(|a| self.min[a] - cell[a]),
            max: std::array::from_fn(|a| self.max[a] + cell[a]),
            values,
        }
    }
}

/// `resolution^3` lattice positions over `[-0.5, 0.5]^3`, x slowest, z fastest.
pub fn lattice_points(resolution: usize) -> Vec<Point3> {
    let coord = |i: usize| {
        if resolution < 2 {
            0.0
        } else {
            (-0.5 + i as f64 / (resolution - 1) as f64) as f32
        }
    };
    let mut points = Vec::with_capacity(resolution.pow(3));
    for i in 0..resolution {
        for j in 0..resolution {
            for k in 0..resolution {
                points.push([coord(i), coord(j), coord(k)]);
            }
        }
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_shape() {
        assert!(ScalarFieldGrid::new([1, 2, 2], [0.0; 3], [1.0; 3], vec![0.0; 4]).is_err());
        assert!(ScalarFieldGrid::new([2, 2, 2], [0.0; 3], [1.0; 3], vec![0.0; 7]).is_err());
    }

    #[test]
    fn lattice_matches_grid_positions() {
        let pts = lattice_points(5);
        let grid = ScalarFieldGrid::unit_cube(5, vec![0.0; 125]).unwrap();
        assert_eq!(pts[grid.index(1, 2, 3)], grid.position(1, 2, 3));
        assert_eq!(pts[0], [-0.5; 3]);
        assert_eq!(pts[124], [0.5; 3]);
        let from_fn =
            ScalarFieldGrid::from_fn([5; 3], [-0.5; 3], [0.5; 3], |p| p[0] + 2.0 * p[2]).unwrap();
        for (idx, p) in pts.iter().enumerate() {
            assert_eq!(from_fn.values()[idx], p[0] + 2.0 * p[2]);
        }
    }

    #[test]
    fn padding_keeps_positions() {
        let grid = ScalarFieldGrid::from_fn([3, 4, 5], [0.0; 3], [1.0; 3], |p| p[0] + p[1] * p[2])
            .unwrap();
        let padded = grid.padded(-1.0);
        assert_eq!(padded.resolution(), [5, 6, 7]);
        assert_eq!(padded.value(0, 0, 0), -1.0);
        assert_eq!(padded.value(2, 3, 4), grid.value(1, 2, 3));
        let (p, q) = (padded.position(2, 3, 4), grid.position(1, 2, 3));
        for a in 0..3 {
            assert!((p[a] - q[a]).abs() < 1e-6);
        }
    }
}

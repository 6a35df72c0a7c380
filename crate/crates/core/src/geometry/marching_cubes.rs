//! Marching cubes over a [`ScalarFieldGrid`] with the classic case table.
//!
//! Samples above `iso` count as inside; triangles are oriented with normals
//! pointing from high to low values. Vertices are shared between cells, so a
//! level set that does not touch the grid boundary yields a closed mesh.

use super::mc_tables::TRIANGLE_TABLE;
use super::{Point3, ScalarFieldGrid, TriangleMesh};

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Lattice edge for each cube edge: (axis, offset of its lower endpoint).
const CELL_EDGES: [(usize, [usize; 3]); 12] = [
    (0, [0, 0, 0]),
    (1, [1, 0, 0]),
    (0, [0, 1, 0]),
    (1, [0, 0, 0]),
    (0, [0, 0, 1]),
    (1, [1, 0, 1]),
    (0, [0, 1, 1]),
    (1, [0, 0, 1]),
    (2, [0, 0, 0]),
    (2, [1, 0, 0]),
    (2, [1, 1, 0]),
    (2, [0, 1, 0]),
];

const NONE: u32 = u32::MAX;

/// Extracts the `iso` level set. Returns an empty mesh when no edge crosses it.
pub fn marching_cubes(grid: &ScalarFieldGrid, iso: f32) -> TriangleMesh {
    let [nx, ny, nz] = grid.resolution();
    let n = nx * ny * nz;
    let below = |idx: usize| grid.values()[idx] < iso;

    // One vertex per crossed lattice edge, created in a fixed order so the
    // result depends only on which edges cross.
    let mut edge_vertex = vec![NONE; 3 * n];
    let mut vertices: Vec<Point3> = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let a = grid.index(i, j, k);
                for axis in 0..3 {
                    let mut next = [i, j, k];
                    next[axis] += 1;
                    if next[axis] >= grid.resolution()[axis] {
                        continue;
                    }
                    let b = grid.index(next[0], next[1], next[2]);
                    if below(a) == below(b) {
                        continue;
                    }
                    let (va, vb) = (grid.values()[a], grid.values()[b]);
                    let t = (iso - va) / (vb - va);
                    let pa = grid.position(i, j, k);
                    let pb = grid.position(next[0], next[1], next[2]);
                    edge_vertex[axis * n + a] = vertices.len() as u32;
                    vertices.push(std::array::from_fn(|c| pa[c] + t * (pb[c] - pa[c])));
                }
            }
        }
    }
    if vertices.is_empty() {
        return TriangleMesh::empty();
    }

    let mut triangles = Vec::new();
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            for k in 0..nz - 1 {
                let case = CORNERS.iter().enumerate().fold(0usize, |acc, (c, o)| {
                    let idx = grid.index(i + o[0], j + o[1], k + o[2]);
                    acc | (usize::from(below(idx)) << c)
                });
                let row = &TRIANGLE_TABLE[case];
                for tri in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
                    let v: [u32; 3] = std::array::from_fn(|c| {
                        let (axis, o) = CELL_EDGES[tri[c] as usize];
                        edge_vertex[axis * n + grid.index(i + o[0], j + o[1], k + o[2])]
                    });
                    debug_assert!(v.iter().all(|&x| x != NONE));
                    triangles.push(v);
                }
            }
        }
    }
    TriangleMesh::new(vertices, triangles).expect("marching cubes emits valid indices")
}

//! Static 3-d tree for exact nearest-neighbor squared distances.

use crate::geometry::Point3;

pub(crate) fn squared_distance(a: Point3, b: Point3) -> f64 {
    let dx = a[0] as f64 - b[0] as f64;
    let dy = a[1] as f64 - b[1] as f64;
    let dz = a[2] as f64 - b[2] as f64;
    dx * dx + dy * dy + dz * dz
}

pub(crate) struct KdTree<'a> {
    points: &'a [Point3],
    /// Point indices arranged as an implicit balanced tree: the median of each
    /// range is its root, split on axis `depth % 3`.
    order: Vec<usize>,
}

impl<'a> KdTree<'a> {
    pub(crate) fn new(points: &'a [Point3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(points, &mut order, 0);
        Self { points, order }
    }

    /// Smallest squared distance from `q` to any tree point.
    pub(crate) fn nearest(&self, q: Point3) -> f64 {
        let mut best = f64::INFINITY;
        self.search(&self.order, 0, q, &mut best);
        best
    }

    fn search(&self, range: &[usize], depth: usize, q: Point3, best: &mut f64) {
        if range.is_empty() {
            return;
        }
        let mid = range.len() / 2;
        let p = self.points[range[mid]];
        let d = squared_distance(p, q);
        if d < *best {
            *best = d;
        }
        let axis = depth % 3;
        let delta = q[axis] as f64 - p[axis] as f64;
        let (near, far) = if delta < 0.0 {
            (&range[..mid], &range[mid + 1..])
        } else {
            (&range[mid + 1..], &range[..mid])
        };
        self.search(near, depth + 1, q, best);
        if delta * delta <= *best {
            self.search(far, depth + 1, q, best);
        }
    }
}

fn build(points: &[Point3], range: &mut [usize], depth: usize) {
    if range.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = range.len() / 2;
    range.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let (left, right) = range.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

//! Chamfer-based set metrics for generated shapes: MMD, COV and 1-NNA.

mod kdtree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point3;
use kdtree::{squared_distance, KdTree};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point cloud has zero variance")]
    ZeroVariance,
    #[error("need at least {needed} points, got {actual}")]
    TooFewPoints { needed: usize, actual: usize },
    #[error("sequences have {0} and {1} frames")]
    FrameCountMismatch(usize, usize),
    #[error("frames have differing point counts")]
    RaggedSequence,
    #[error("set `{0}` is too small")]
    SetTooSmall(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point3>,
    pub frame: Option<usize>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self, MetricsError> {
        if points.is_empty() {
            return Err(MetricsError::EmptyCloud);
        }
        Ok(Self {
            points,
            frame: None,
        })
    }

    pub fn with_frame(mut self, frame: usize) -> Self {
        self.frame = Some(frame);
        self
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, offset: Point3) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| std::array::from_fn(|k| p[k] + offset[k]))
                .collect(),
            frame: self.frame,
        }
    }
}

/// Frames of one animated shape, all with the same point count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudSequence {
    frames: Vec<PointCloud>,
}

impl CloudSequence {
    pub fn new(frames: Vec<PointCloud>) -> Result<Self, MetricsError> {
        let k = frames.first().ok_or(MetricsError::EmptyCloud)?.len();
        if frames.iter().any(|f| f.len() != k) {
            return Err(MetricsError::RaggedSequence);
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[PointCloud] {
        &self.frames
    }
}

/// Subtracts the per-axis mean and divides by the standard deviation of all
/// centered coordinate values.
pub fn normalize_cloud(pc: &PointCloud) -> Result<PointCloud, MetricsError> {
    let n = pc.len();
    if n < 2 {
        return Err(MetricsError::TooFewPoints {
            needed: 2,
            actual: n,
        });
    }
    let mut mean = [0.0f64; 3];
    for p in pc.points() {
        for k in 0..3 {
            mean[k] += p[k] as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let var = pc
        .points()
        .iter()
        .flat_map(|p| (0..3).map(move |k| (p[k] as f64 - mean[k]).powi(2)))
        .sum::<f64>()
        / (3 * n) as f64;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(MetricsError::ZeroVariance);
    }
    Ok(PointCloud {
        points: pc
            .points()
            .iter()
            .map(|p| std::array::from_fn(|k| ((p[k] as f64 - mean[k]) / std) as f32))
            .collect(),
        frame: pc.frame,
    })
}

fn directed(from: &[Point3], to: &[Point3]) -> f64 {
    let tree = KdTree::new(to);
    from.iter().map(|&p| tree.nearest(p)).sum::<f64>() / from.len() as f64
}

/// Squared-distance Chamfer distance: the sum of both directed mean squared
/// nearest-neighbor distances.
pub fn chamfer(x: &PointCloud, y: &PointCloud) -> f64 {
    directed(x.points(), y.points()) + directed(y.points(), x.points())
}

/// Brute-force Chamfer distance, for checking the tree-based version.
pub fn chamfer_brute_force(x: &PointCloud, y: &PointCloud) -> f64 {
    let directed = |a: &[Point3], b: &[Point3]| {
        a.iter()
            .map(|&p| {
                b.iter()
                    .map(|&q| squared_distance(p, q))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / a.len() as f64
    };
    directed(x.points(), y.points()) + directed(y.points(), x.points())
}

/// Mean per-frame Chamfer distance.
pub fn temporal_distance(x: &CloudSequence, y: &CloudSequence) -> Result<f64, MetricsError> {
    if x.frames.len() != y.frames.len() {
        return Err(MetricsError::FrameCountMismatch(
            x.frames.len(),
            y.frames.len(),
        ));
    }
    Ok(x.frames
        .iter()
        .zip(&y.frames)
        .map(|(a, b)| chamfer(a, b))
        .sum::<f64>()
        / x.frames.len() as f64)
}

/// Row-major `rows x cols` matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    /// `d(a[i], b[j])` for all pairs, computed in parallel.
    pub fn compute<A: Sync, B: Sync>(a: &[A], b: &[B], d: impl Fn(&A, &B) -> f64 + Sync) -> Self {
        let cols = b.len();
        let values = (0..a.len() * cols)
            .into_par_iter()
            .map(|idx| d(&a[idx / cols], &b[idx % cols]))
            .collect();
        Self {
            rows: a.len(),
            cols,
            values,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
}

/// Index of the smallest value; ties go to the lowest index.
fn argmin(values: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Mean over reference items of the distance to the closest generated item.
/// `gen_ref` holds `D(generated[i], reference[j])`.
pub fn mmd(gen_ref: &DistanceMatrix) -> f64 {
    (0..gen_ref.cols)
        .map(|j| {
            (0..gen_ref.rows)
                .map(|i| gen_ref.get(i, j))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / gen_ref.cols as f64
}

/// Percentage of reference items that are the nearest reference of at least
/// one generated item.
pub fn cov(gen_ref: &DistanceMatrix) -> f64 {
    let mut matched = vec![false; gen_ref.cols];
    for i in 0..gen_ref.rows {
        if let Some(j) = argmin((0..gen_ref.cols).map(|j| (j, gen_ref.get(i, j)))) {
            matched[j] = true;
        }
    }
    100.0 * matched.iter().filter(|&&m| m).count() as f64 / gen_ref.cols as f64
}

/// Leave-one-out 1-nearest-neighbor accuracy over the pool (generated items
/// first, then reference items), in percent.
pub fn one_nna(
    gen_gen: &DistanceMatrix,
    ref_ref: &DistanceMatrix,
    gen_ref: &DistanceMatrix,
) -> f64 {
    let (g, r) = (gen_gen.rows, ref_ref.rows);
    let pooled = |a: usize, b: usize| -> f64 {
        match (a < g, b < g) {
            (true, true) => gen_gen.get(a, b),
            (false, false) => ref_ref.get(a - g, b - g),
            (true, false) => gen_ref.get(a, b - g),
            (false, true) => gen_ref.get(b, a - g),
        }
    };
    let correct = (0..g + r)
        .filter(|&x| {
            let nn = argmin((0..g + r).filter(|&y| y != x).map(|y| (y, pooled(x, y))));
            nn.is_some_and(|y| (y < g) == (x < g))
        })
        .count();
    100.0 * correct as f64 / (g + r) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Chamfer units multiplied by 100.
    pub mmd: f64,
    pub cov_percent: f64,
    pub one_nna_percent: f64,
    pub generated: usize,
    pub reference: usize,
}

impl MetricsReport {
    pub fn to_table(&self) -> String {
        format!(
            "{:>10} {:>10} {:>10} {:>6} {:>6}\n{:>10.4} {:>10.2} {:>10.2} {:>6} {:>6}\n",
            "MMD",
            "COV(%)",
            "1-NNA(%)",
            "|Sg|",
            "|Sr|",
            self.mmd,
            self.cov_percent,
            self.one_nna_percent,
            self.generated,
            self.reference
        )
    }
}

/// All three metrics for a generated and a reference set under distance `d`.
pub fn evaluate<X: Sync>(
    generated: &[X],
    reference: &[X],
    d: impl Fn(&X, &X) -> f64 + Sync,
) -> Result<MetricsReport, MetricsError> {
    if generated.len() < 2 {
        return Err(MetricsError::SetTooSmall("generated"));
    }
    if reference.len() < 2 {
        return Err(MetricsError::SetTooSmall("reference"));
    }
    let gen_ref = DistanceMatrix::compute(generated, reference, &d);
    let gen_gen = DistanceMatrix::compute(generated, generated, &d);
    let ref_ref = DistanceMatrix::compute(reference, reference, &d);
    Ok(MetricsReport {
        mmd: 100.0 * mmd(&gen_ref),
        cov_percent: cov(&gen_ref),
        one_nna_percent: one_nna(&gen_gen, &ref_ref, &gen_ref),
        generated: generated.len(),
        reference: reference.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[Point3]) -> PointCloud {
        PointCloud::new(points.to_vec()).unwrap()
    }

    #[test]
    fn chamfer_of_two_points() {
        let x = cloud(&[[0.0, 0.0, 0.0]]);
        let y = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&x, &y), 2.0);
        assert_eq!(chamfer(&x, &x), 0.0);
    }

    #[test]
    fn normalization_moments() {
        let pc = cloud(&[
            [1.0, 2.0, 3.0],
            [2.0, 0.0, 1.0],
            [0.5, 0.5, 4.0],
            [3.0, 1.0, 0.0],
        ]);
        let n = normalize_cloud(&pc).unwrap();
        let coords: Vec<f64> = n
            .points()
            .iter()
            .flat_map(|p| p.map(|c| c as f64))
            .collect();
        for k in 0..3 {
            let m: f64 = n.points().iter().map(|p| p[k] as f64).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-6);
        }
        let var = coords.iter().map(|c| c * c).sum::<f64>() / coords.len() as f64;
        assert!((var.sqrt() - 1.0).abs() < 1e-6);
        assert_eq!(
            normalize_cloud(&cloud(&[[1.0; 3], [1.0; 3]])),
            Err(MetricsError::ZeroVariance)
        );
    }

    #[test]
    fn temporal_distance_is_mean_of_frames() {
        let a = CloudSequence::new(vec![cloud(&[[0.0; 3]]), cloud(&[[0.0; 3]])]).unwrap();
        let b = CloudSequence::new(vec![
            cloud(&[[1.0, 0.0, 0.0]]),
            cloud(&[[2f32.sqrt(), 0.0, 0.0]]),
        ])
        .unwrap();
        assert!((temporal_distance(&a, &b).unwrap() - 3.0).abs() < 1e-6);
        let one = CloudSequence::new(vec![cloud(&[[0.0; 3]])]).unwrap();
        assert!(temporal_distance(&a, &one).is_err());
    }

    #[test]
    fn set_metric_examples() {
        let d = DistanceMatrix {
            rows: 2,
            cols: 2,
            values: vec![1.0, 5.0, 4.0, 3.0],
        };
        assert_eq!(mmd(&d), 2.0);
        assert_eq!(cov(&d), 100.0);
        let collapsed = DistanceMatrix {
            rows: 3,
            cols: 4,
            values: vec![0.0, 1.0, 1.0, 1.0, 0.5, 2.0, 2.0, 2.0, 0.1, 0.2, 0.3, 0.4],
        };
        assert_eq!(cov(&collapsed), 25.0);
    }

    #[test]
    fn separated_sets_are_fully_classified() {
        let near = |c: f32, i: usize| cloud(&[[c + 0.01 * i as f32, 0.0, 0.0], [c, 0.1, 0.0]]);
        let g: Vec<_> = (0..4).map(|i| near(0.0, i)).collect();
        let r: Vec<_> = (0..4).map(|i| near(100.0, i)).collect();
        let report = evaluate(&g, &r, chamfer).unwrap();
        assert_eq!(report.one_nna_percent, 100.0);
        let own = evaluate(&g, &g, chamfer).unwrap();
        assert_eq!(own.mmd, 0.0);
        assert_eq!(own.cov_percent, 100.0);
        assert_eq!(own.one_nna_percent, 0.0);
    }
}

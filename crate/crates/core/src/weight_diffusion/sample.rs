use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{DiffusionError, NoiseSchedule, TransformerDenoiser};
use crate::metrics::{chamfer, PointCloud};

/// Anything that predicts clean vectors from noisy ones, batched.
pub trait Denoise {
    /// Flat vector length `h`.
    fn weight_len(&self) -> usize;
    /// `x[batch, h]` at per-row timesteps `t` to predictions of `x0`.
    fn denoise(&self, x: &[f32], t: &[usize]) -> Result<Vec<f32>, DiffusionError>;
    /// Maps model-space vectors back to weight space.
    fn to_weights(&self, _x: &mut [f32]) {}
}

impl Denoise for TransformerDenoiser {
    fn weight_len(&self) -> usize {
        TransformerDenoiser::weight_len(self)
    }

    fn denoise(&self, x: &[f32], t: &[usize]) -> Result<Vec<f32>, DiffusionError> {
        self.predict(x, t)
    }

    fn to_weights(&self, x: &mut [f32]) {
        if let Some(norm) = &self.normalization {
            norm.invert(x);
        }
    }
}

/// One generated vector with the requested intermediate snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub seed: u64,
    pub weights: Vec<f32>,
    /// `(steps taken, vector)`: step 0 is the initial noise, step `s >= 1` the
    /// clean-vector prediction made by the `s`-th denoising call.
    pub trajectory: Vec<(usize, Vec<f32>)>,
}

/// Initial noise `x_T` for `seed`.
pub fn initial_noise(seed: u64, h: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..h).map(|_| rng.sample(StandardNormal)).collect()
}

/// One deterministic DDIM update from `x_t` to `x_{t-1}` given the clean
/// prediction `pred`, in place. At `t = 1` the result is `pred` itself.
pub fn ddim_step(
    schedule: &NoiseSchedule,
    x: &mut [f32],
    pred: &[f32],
    t: usize,
) -> Result<(), DiffusionError> {
    let ab = schedule.alpha_bar(t)?;
    let ab_prev = schedule.alpha_bar(t - 1)?;
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (sa_prev, sn_prev) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    for (xi, &p) in x.iter_mut().zip(pred) {
        let eps = (*xi as f64 - sa * p as f64) / sn;
        *xi = (sa_prev * p as f64 + sn_prev * eps) as f32;
    }
    Ok(())
}

/// Deterministic DDIM (eta = 0) over every timestep `T, T-1, .., 1`, one
/// sample per seed, all seeds denoised as one batch.
pub fn ddim_sample(
    model: &impl Denoise,
    schedule: &NoiseSchedule,
    seeds: &[u64],
    trajectory_steps: &[usize],
) -> Result<Vec<Sample>, DiffusionError> {
    let h = model.weight_len();
    let n = seeds.len();
    let total = schedule.timesteps();
    if let Some(&bad) = trajectory_steps.iter().find(|&&s| s > total) {
        return Err(DiffusionError::TimestepOutOfRange { t: bad, max: total });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut x: Vec<f32> = seeds.iter().flat_map(|&s| initial_noise(s, h)).collect();
    let mut trajectories: Vec<Vec<(usize, Vec<f32>)>> = vec![Vec::new(); n];
    let snapshot = |step: usize, values: &[f32], trajectories: &mut Vec<Vec<(usize, Vec<f32>)>>| {
        if trajectory_steps.contains(&step) {
            for (i, traj) in trajectories.iter_mut().enumerate() {
                let mut v = values[i * h..(i + 1) * h].to_vec();
                model.to_weights(&mut v);
                traj.push((step, v));
            }
        }
    };
    snapshot(0, &x, &mut trajectories);

    for (step, t) in (1..=total).rev().enumerate().map(|(i, t)| (i + 1, t)) {
        let x0 = model.denoise(&x, &vec![t; n])?;
        if x0.len() != x.len() {
            return Err(DiffusionError::LengthMismatch {
                expected: x.len(),
                actual: x0.len(),
            });
        }
        ddim_step(schedule, &mut x, &x0, t)?;
        snapshot(step, &x0, &mut trajectories);
    }

    Ok(seeds
        .iter()
        .zip(trajectories)
        .enumerate()
        .map(|(i, (&seed, trajectory))| {
            let mut weights = x[i * h..(i + 1) * h].to_vec();
            model.to_weights(&mut weights);
            Sample {
                seed,
                weights,
                trajectory,
            }
        })
        .collect())
}

/// Greedy Chamfer de-duplication: an item survives iff its distance to every
/// earlier survivor exceeds `threshold`. Items whose point cloud could not be
/// produced are dropped with a warning. Returns surviving indices.
pub fn dedupe<E: std::fmt::Display>(
    clouds: Vec<Result<PointCloud, E>>,
    threshold: f64,
) -> Vec<usize> {
    let mut kept: Vec<(usize, PointCloud)> = Vec::new();
    for (i, cloud) in clouds.into_iter().enumerate() {
        let cloud = match cloud {
            Ok(c) => c,
            Err(e) => {
                log::warn!("dropping sample {i}: {e}");
                continue;
            }
        };
        let distinct = kept
            .par_iter()
            .map(|(_, k)| chamfer(&cloud, k))
            .all(|d| d > threshold);
        if distinct {
            kept.push((i, cloud));
        }
    }
    kept.into_iter().map(|(i, _)| i).collect()
}

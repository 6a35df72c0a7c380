use serde::{Deserialize, Serialize};

use super::DiffusionError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            timesteps: 500,
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }
}

/// Linear beta schedule with its derived alpha and cumulative alpha tables,
/// indexed by `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self, DiffusionError> {
        let ScheduleConfig {
            timesteps,
            beta_start,
            beta_end,
        } = config;
        if timesteps == 0
            || !(beta_start > 0.0 && beta_end < 1.0)
            || (timesteps > 1 && !(beta_end > beta_start))
        {
            return Err(DiffusionError::InvalidConfig(format!(
                "schedule needs T >= 1 and 0 < beta_start < beta_end < 1, got {config:?}"
            )));
        }
        let betas: Vec<f64> = (0..timesteps)
            .map(|i| {
                if timesteps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
                }
            })
            .collect();
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self {
            config,
            betas,
            alpha_bars,
        })
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<usize, DiffusionError> {
        if t == 0 || t > self.timesteps() {
            return Err(DiffusionError::TimestepOutOfRange {
                t,
                max: self.timesteps(),
            });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64, DiffusionError> {
        Ok(self.betas[self.check(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64, DiffusionError> {
        Ok(1.0 - self.beta(t)?)
    }

    /// Cumulative product up to `t`, with `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64, DiffusionError> {
        if t == 0 {
            return Ok(1.0);
        }
        Ok(self.alpha_bars[self.check(t)?])
    }
}

/// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_diffuse(
    schedule: &NoiseSchedule,
    x0: &[f32],
    t: usize,
    eps: &[f32],
) -> Result<Vec<f32>, DiffusionError> {
    if t == 0 {
        return Err(DiffusionError::TimestepOutOfRange {
            t,
            max: schedule.timesteps(),
        });
    }
    let ab = schedule.alpha_bar(t)?;
    if eps.len() != x0.len() {
        return Err(DiffusionError::LengthMismatch {
            expected: x0.len(),
            actual: eps.len(),
        });
    }
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(&x, &e)| (s * x as f64 + n * e as f64) as f32)
        .collect())
}

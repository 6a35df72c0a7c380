use serde::{Deserialize, Serialize};

use super::{NumericsError, ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// AdamW with bias-corrected moments and decoupled weight decay:
/// `p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T: Real = f32> {
    pub config: AdamWConfig,
    step: u64,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        Self {
            config,
            step: 0,
            first_moment: params
                .iter()
                .map(|p| vec![T::zero(); p.tensor.len()])
                .collect(),
            second_moment: params
                .iter()
                .map(|p| vec![T::zero(); p.tensor.len()])
                .collect(),
        }
    }

    /// Restores a previously saved state.
    pub fn from_parts(
        config: AdamWConfig,
        step: u64,
        first_moment: Vec<Vec<T>>,
        second_moment: Vec<Vec<T>>,
    ) -> Self {
        Self {
            config,
            step,
            first_moment,
            second_moment,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.first_moment, &self.second_moment)
    }

    /// Applies one update using the gradients accumulated in `params`.
    ///
    /// The whole step is rejected, leaving parameters and state untouched, if
    /// any gradient is non-finite. Parameters without a gradient are treated as
    /// having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<(), NumericsError> {
        if !(self.config.lr > 0.0) {
            return Err(NumericsError::InvalidLearningRate(self.config.lr));
        }
        if params.len() != self.first_moment.len() {
            return Err(NumericsError::StateMismatch(format!(
                "{} parameters vs {} moment buffers",
                params.len(),
                self.first_moment.len()
            )));
        }
        for (idx, p) in params.iter().enumerate() {
            if p.tensor.len() != self.first_moment[idx].len() {
                return Err(NumericsError::StateMismatch(p.name.clone()));
            }
            if let Some(g) = p.tensor.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(NumericsError::NonFiniteGradient(p.name.clone()));
                }
            }
        }

        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bias1 = T::from_f64(1.0 - c.beta1.powi(t));
        let bias2 = T::from_f64(1.0 - c.beta2.powi(t));
        let (beta1, beta2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_m_b1, one_m_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let lr = T::from_f64(c.lr);
        let eps = T::from_f64(c.eps);
        let decay = T::from_f64(c.weight_decay);

        for (idx, p) in params.iter_mut().enumerate() {
            let (values, grad) = p.tensor.parts_mut();
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            for j in 0..values.len() {
                let g = grad.map_or(T::zero(), |g| g[j]);
                m[j] = beta1 * m[j] + one_m_b1 * g;
                v[j] = beta2 * v[j] + one_m_b2 * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                values[j] -= lr * (m_hat / (v_hat.sqrt() + eps) + decay * values[j]);
            }
        }
        Ok(())
    }
}

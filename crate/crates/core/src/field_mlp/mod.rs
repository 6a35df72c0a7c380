//! Per-shape occupancy MLPs: positional encoding, evaluation, overfitting,
//! canonical flattening and checkpoints.

mod checkpoint;
mod fit;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{lattice_points, GeometryError, ScalarFieldGrid};
use crate::numerics::{self, NumericsError, ParamStore, Real, Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use fit::{
    fit_dataset, fit_field, iou, DatasetEntry, DatasetManifest, FitConfig, FitInit, FitReport,
};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid field configuration: {0}")]
    InvalidConfig(String),
    #[error("weight vector has {actual} values, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("checkpoint was written for {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("not a field checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("points have dimension {actual}, the field expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("a time value is required for a 4D field")]
    TimeRequired,
    #[error("a time value was given for a 3D field")]
    UnexpectedTime,
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("io error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Architecture of one occupancy field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMlpConfig {
    /// Point dimension: 3, or 4 for space-time fields.
    pub input_dim: usize,
    pub width: usize,
    pub hidden_layers: usize,
    /// Positional-encoding frequency count `L`.
    pub frequencies: usize,
    /// Occupancy iso-level applied after the sigmoid.
    pub iso: f32,
}

impl Default for FieldMlpConfig {
    fn default() -> Self {
        Self {
            input_dim: 3,
            width: 128,
            hidden_layers: 3,
            frequencies: 4,
            iso: 0.5,
        }
    }
}

impl FieldMlpConfig {
    pub fn with_input_dim(self, input_dim: usize) -> Self {
        Self { input_dim, ..self }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let bad = |m: &str| Err(FieldError::InvalidConfig(m.to_string()));
        if self.input_dim != 3 && self.input_dim != 4 {
            return bad("input_dim must be 3 or 4");
        }
        if self.width == 0 || self.hidden_layers == 0 || self.frequencies == 0 {
            return bad("width, hidden_layers and frequencies must be positive");
        }
        if !(self.iso > 0.0 && self.iso < 1.0) {
            return bad("iso must lie strictly between 0 and 1");
        }
        Ok(())
    }

    pub fn encoded_dim(&self) -> usize {
        self.input_dim * 2 * self.frequencies
    }

    /// `[encoded, width, .., width, 1]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.encoded_dim()];
        dims.extend(std::iter::repeat_n(self.width, self.hidden_layers));
        dims.push(1);
        dims
    }

    /// Flattened parameter count `h`.
    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Iso-level expressed as a logit.
    pub fn iso_logit(&self) -> f32 {
        (self.iso / (1.0 - self.iso)).ln()
    }

    pub(crate) fn describe(&self) -> String {
        format!(
            "n={} width={} hidden={} L={}",
            self.input_dim, self.width, self.hidden_layers, self.frequencies
        )
    }
}

/// Appends `(sin(2^k pi x_d), cos(2^k pi x_d))` for every coordinate `d` and
/// frequency `k < frequencies`. Raw coordinates are not included.
pub fn positional_encode_into<T: Real>(x: &[f32], frequencies: usize, out: &mut Vec<T>) {
    for &c in x {
        let mut scale = std::f64::consts::PI;
        for _ in 0..frequencies {
            let (s, co) = (scale * c as f64).sin_cos();
            out.push(T::from_f64(s));
            out.push(T::from_f64(co));
            scale *= 2.0;
        }
    }
}

pub fn positional_encode(x: &[f32], frequencies: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(x.len() * 2 * frequencies);
    positional_encode_into(x, frequencies, &mut out);
    out
}

/// Canonical flat form of a field's parameters: for each layer, the weight
/// matrix (out x in, row-major) followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    config: FieldMlpConfig,
    values: Vec<f32>,
}

impl WeightVector {
    pub fn new(config: FieldMlpConfig, values: Vec<f32>) -> Result<Self, FieldError> {
        config.validate()?;
        let expected = config.param_count();
        if values.len() != expected {
            return Err(FieldError::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(Self { config, values })
    }

    pub fn config(&self) -> &FieldMlpConfig {
        &self.config
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn l2_distance(&self, other: &WeightVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Occupancy MLP with ReLU hidden layers and a scalar logit output.
/// Parameters are stored as `layers.{l}.weight` (`[out, in]`) and
/// `layers.{l}.bias` (`[out]`), in flatten order.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMlp<T: Real = f32> {
    config: FieldMlpConfig,
    params: ParamStore<T>,
}

impl<T: Real> FieldMlp<T> {
    fn from_layers(config: FieldMlpConfig, mut fill: impl FnMut(usize, usize) -> Vec<T>) -> Self {
        let mut params = ParamStore::new();
        for (l, w) in config.layer_dims().windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weight = fill(fan_in, fan_in * fan_out);
            let bias = fill(fan_in, fan_out);
            params.push(
                format!("layers.{l}.weight"),
                Tensor::new(vec![fan_out, fan_in], weight).expect("layer shape"),
            );
            params.push(
                format!("layers.{l}.bias"),
                Tensor::new(vec![fan_out], bias).expect("layer shape"),
            );
        }
        Self { config, params }
    }

    pub fn zeros(config: FieldMlpConfig) -> Result<Self, FieldError> {
        config.validate()?;
        Ok(Self::from_layers(config, |_, n| vec![T::zero(); n]))
    }

    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn random(config: FieldMlpConfig, seed: u64) -> Result<Self, FieldError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::from_layers(config, |fan_in, n| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            (0..n).map(|_| T::from_f64(dist.sample(&mut rng))).collect()
        }))
    }

    pub fn config(&self) -> &FieldMlpConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> FieldMlp<U> {
        FieldMlp {
            config: self.config,
            params: self.params.cast(),
        }
    }

    fn check_dim(&self, points: &[f32]) -> Result<usize, FieldError> {
        let n = self.config.input_dim;
        if !points.len().is_multiple_of(n) {
            return Err(FieldError::DimensionMismatch {
                expected: n,
                actual: points.len(),
            });
        }
        Ok(points.len() / n)
    }

    /// Encodes `points` (flat, `input_dim` per point) into a `[count, enc]` matrix.
    pub fn encode(&self, points: &[f32]) -> Result<Vec<T>, FieldError> {
        let count = self.check_dim(points)?;
        let mut out = Vec::with_capacity(count * self.config.encoded_dim());
        for p in points.chunks(self.config.input_dim) {
            positional_encode_into(p, self.config.frequencies, &mut out);
        }
        Ok(out)
    }

    /// Records the forward pass of already encoded inputs; returns the
    /// `[rows, 1]` logits and the parameter bindings in store order.
    pub fn forward_tape<'a>(
        &'a self,
        tape: &Tape<'a, T>,
        encoded: Vec<T>,
        rows: usize,
    ) -> (Var, Vec<Var>) {
        let vars = tape.params(&self.params);
        let mut h = tape.constant(vec![rows, self.config.encoded_dim()], encoded);
        let layers = vars.len() / 2;
        for l in 0..layers {
            h = tape.add_row(tape.matmul(h, vars[2 * l], true), vars[2 * l + 1]);
            if l + 1 < layers {
                h = tape.relu(h);
            }
        }
        (h, vars)
    }

    /// Logits for flat `points`, evaluated directly in chunks.
    pub fn logits(&self, points: &[f32]) -> Result<Vec<T>, FieldError> {
        const CHUNK: usize = 4096;
        let n = self.config.input_dim;
        self.check_dim(points)?;
        let parts: Vec<Vec<T>> = points
            .par_chunks(CHUNK * n)
            .map(|chunk| {
                let rows = chunk.len() / n;
                let mut h = self.encode(chunk).expect("chunk dimension");
                let layers = self.params.len() / 2;
                for l in 0..layers {
                    let w = self.params.get(2 * l);
                    let b = self.params.get(2 * l + 1).values();
                    let (out, inp) = (w.shape()[0], w.shape()[1]);
                    let mut next = numerics::matmul(&h, w.values(), rows, inp, out, true);
                    let last = l + 1 == layers;
                    for row in next.chunks_mut(out) {
                        for (v, &bias) in row.iter_mut().zip(b) {
                            *v += bias;
                            if !last && *v < T::zero() {
                                *v = T::zero();
                            }
                        }
                    }
                    h = next;
                }
                h
            })
            .collect();
        Ok(parts.concat())
    }

    pub fn logit(&self, point: &[f32]) -> Result<T, FieldError> {
        if point.len() != self.config.input_dim {
            return Err(FieldError::DimensionMismatch {
                expected: self.config.input_dim,
                actual: point.len(),
            });
        }
        Ok(self.logits(point)?[0])
    }

    pub fn occupancy(&self, points: &[f32]) -> Result<Vec<T>, FieldError> {
        Ok(self
            .logits(points)?
            .into_iter()
            .map(numerics::sigmoid)
            .collect())
    }
}

impl FieldMlp<f32> {
    /// Concatenates all parameters in store order.
    pub fn flatten(&self) -> WeightVector {
        let values = self
            .params
            .iter()
            .flat_map(|p| p.tensor.values().iter().copied())
            .collect();
        WeightVector {
            config: self.config,
            values,
        }
    }

    pub fn unflatten(v: &WeightVector) -> Result<Self, FieldError> {
        let mut mlp = Self::zeros(v.config)?;
        if v.values.len() != v.config.param_count() {
            return Err(FieldError::LengthMismatch {
                expected: v.config.param_count(),
                actual: v.values.len(),
            });
        }
        let mut offset = 0;
        for p in mlp.params.iter_mut() {
            let len = p.tensor.len();
            p.tensor
                .values_mut()
                .copy_from_slice(&v.values[offset..offset + len]);
            offset += len;
        }
        Ok(mlp)
    }
}

/// Sigmoid occupancy of `weights` on a `resolution^3` lattice over
/// `[-0.5, 0.5]^3`; 4D fields are sliced at `time`.
pub fn field_to_grid(
    weights: &WeightVector,
    resolution: usize,
    time: Option<f32>,
) -> Result<ScalarFieldGrid, FieldError> {
    let mlp = FieldMlp::unflatten(weights)?;
    match (weights.config.input_dim, time) {
        (4, None) => return Err(FieldError::TimeRequired),
        (3, Some(_)) => return Err(FieldError::UnexpectedTime),
        _ => {}
    }
    if resolution < 2 {
        return Err(GeometryError::InvalidResolution([resolution; 3]).into());
    }
    let lattice = lattice_points(resolution);
    let points: Vec<f32> = match time {
        None => lattice.into_iter().flatten().collect(),
        Some(t) => lattice
            .into_iter()
            .flat_map(|p| [p[0], p[1], p[2], t])
            .collect(),
    };
    let values = mlp.occupancy(&points)?;
    Ok(ScalarFieldGrid::unit_cube(resolution, values)?)
}

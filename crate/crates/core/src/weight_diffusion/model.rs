use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DiffusionError, ScheduleConfig, TokenLayout};
use crate::numerics::{ParamStore, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub layout: TokenLayout,
    pub schedule: ScheduleConfig,
    /// Base of the geometric frequency spacing of the timestep embedding.
    pub time_base: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            layers: 6,
            heads: 8,
            layout: TokenLayout::default(),
            schedule: ScheduleConfig::default(),
            time_base: 10_000.0,
        }
    }
}

impl DenoiserConfig {
    /// Full-size transformer: 2880 hidden, 12 layers, 16 heads.
    pub fn full_size(layout: TokenLayout) -> Self {
        Self {
            hidden: 2880,
            layers: 12,
            heads: 16,
            layout,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(DiffusionError::InvalidConfig(format!(
                "hidden size {} must be a positive multiple of {} heads",
                self.hidden, self.heads
            )));
        }
        if !self.hidden.is_multiple_of(2) {
            return Err(DiffusionError::InvalidConfig(
                "hidden size must be even".into(),
            ));
        }
        if !(self.time_base > 1.0) {
            return Err(DiffusionError::InvalidConfig(
                "time_base must exceed 1".into(),
            ));
        }
        Ok(())
    }

    /// Tokens seen by the transformer: the timestep token plus the weight tokens.
    pub fn sequence_len(&self) -> usize {
        self.layout.len() + 1
    }
}

/// Sinusoidal embedding of `t`: interleaved `(sin, cos)` of `t * base^(-2i/dim)`.
pub fn timestep_embedding(t: usize, dim: usize, base: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = base.powf(-2.0 * i as f64 / dim as f64);
        let (s, c) = (t as f64 * freq).sin_cos();
        out.push(s);
        out.push(c);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Linear {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Block {
    ln1: Linear,
    qkv: Linear,
    attn_out: Linear,
    ln2: Linear,
    fc: Linear,
    fc_out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
struct Indices {
    input: Vec<Linear>,
    time: Linear,
    position: usize,
    blocks: Vec<Block>,
    ln_final: Linear,
    output: Vec<Linear>,
}

/// Per-coordinate standardization applied to weight vectors before diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    /// Statistics over a dataset; zero spread falls back to 1.
    pub fn fit(data: &[Vec<f32>]) -> Self {
        let h = data[0].len();
        let n = data.len() as f64;
        let mut mean = vec![0.0f64; h];
        for v in data {
            for (m, &x) in mean.iter_mut().zip(v) {
                *m += x as f64 / n;
            }
        }
        let mut var = vec![0.0f64; h];
        for v in data {
            for ((s, &x), &m) in var.iter_mut().zip(v).zip(&mean) {
                *s += (x as f64 - m).powi(2) / n;
            }
        }
        Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: var
                .iter()
                .map(|&s| if s > 1e-16 { s.sqrt() as f32 } else { 1.0 })
                .collect(),
        }
    }

    pub fn apply(&self, v: &mut [f32]) {
        for ((x, &m), &s) in v
            .iter_mut()
            .zip(self.mean.iter().cycle())
            .zip(self.std.iter().cycle())
        {
            *x = (*x - m) / s;
        }
    }

    pub fn invert(&self, v: &mut [f32]) {
        for ((x, &m), &s) in v
            .iter_mut()
            .zip(self.mean.iter().cycle())
            .zip(self.std.iter().cycle())
        {
            *x = *x * s + m;
        }
    }
}

/// Transformer that maps a noisy weight vector and its timestep to a
/// prediction of the clean vector.
///
/// Each weight token has its own input and output projection; the timestep
/// enters as an extra leading token whose output is discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerDenoiser<T: Real = f32> {
    config: DenoiserConfig,
    params: ParamStore<T>,
    idx: Indices,
    pub normalization: Option<Normalization>,
}

impl<T: Real> TransformerDenoiser<T> {
    /// Linear and positional weights from `N(0, 0.02)`, zero biases, unit
    /// layer-norm gains.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self, DiffusionError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut params = ParamStore::new();
        let hidden = config.hidden;

        let mut random = |store: &mut ParamStore<T>, name: String, shape: Vec<usize>| {
            let n = shape.iter().product();
            let values = (0..n)
                .map(|_| T::from_f64(normal.sample(&mut rng)))
                .collect();
            store.push(name, Tensor::new(shape, values).expect("shape"))
        };
        let constant = |store: &mut ParamStore<T>, name: String, n: usize, v: f64| {
            store.push(
                name,
                Tensor::new(vec![n], vec![T::from_f64(v); n]).expect("shape"),
            )
        };

        let mut linear = |store: &mut ParamStore<T>, name: &str, out: usize, inp: usize| Linear {
            weight: random(store, format!("{name}.weight"), vec![out, inp]),
            bias: constant(store, format!("{name}.bias"), out, 0.0),
        };
        let input = (0..config.layout.len())
            .map(|i| {
                linear(
                    &mut params,
                    &format!("input.{i}"),
                    hidden,
                    config.layout.lengths()[i],
                )
            })
            .collect();
        let time = linear(&mut params, "time", hidden, hidden);
        let blocks: Vec<Block> = (0..config.layers)
            .map(|l| {
                let ln1 = Linear {
                    weight: constant(&mut params, format!("blocks.{l}.ln1.weight"), hidden, 1.0),
                    bias: constant(&mut params, format!("blocks.{l}.ln1.bias"), hidden, 0.0),
                };
                let qkv = linear(&mut params, &format!("blocks.{l}.qkv"), 3 * hidden, hidden);
                let attn_out = linear(&mut params, &format!("blocks.{l}.attn_out"), hidden, hidden);
                let ln2 = Linear {
                    weight: constant(&mut params, format!("blocks.{l}.ln2.weight"), hidden, 1.0),
                    bias: constant(&mut params, format!("blocks.{l}.ln2.bias"), hidden, 0.0),
                };
                let fc = linear(&mut params, &format!("blocks.{l}.fc"), 4 * hidden, hidden);
                let fc_out = linear(
                    &mut params,
                    &format!("blocks.{l}.fc_out"),
                    hidden,
                    4 * hidden,
                );
                Block {
                    ln1,
                    qkv,
                    attn_out,
                    ln2,
                    fc,
                    fc_out,
                }
            })
            .collect();
        let ln_final = Linear {
            weight: constant(&mut params, "ln_final.weight".into(), hidden, 1.0),
            bias: constant(&mut params, "ln_final.bias".into(), hidden, 0.0),
        };
        let output = (0..config.layout.len())
            .map(|i| {
                linear(
                    &mut params,
                    &format!("output.{i}"),
                    config.layout.lengths()[i],
                    hidden,
                )
            })
            .collect();
        // Declared last so the linear layers above keep a stable numbering.
        let position = random(
            &mut params,
            "position".into(),
            vec![config.sequence_len(), hidden],
        );

        Ok(Self {
            config,
            params,
            idx: Indices {
                input,
                time,
                position,
                blocks,
                ln_final,
                output,
            },
            normalization: None,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn weight_len(&self) -> usize {
        self.config.layout.total()
    }

    pub fn cast<U: Real>(&self) -> TransformerDenoiser<U> {
        TransformerDenoiser {
            config: self.config.clone(),
            params: self.params.cast(),
            idx: self.idx.clone(),
            normalization: self.normalization.clone(),
        }
    }

    /// Records the forward pass for `x[batch, h]` at per-row timesteps `t`.
    /// Returns the `[batch, h]` prediction and the parameter bindings.
    pub fn forward_tape<'a>(
        &'a self,
        tape: &Tape<'a, T>,
        x: Vec<T>,
        t: &[usize],
    ) -> Result<(Var, Vec<Var>), DiffusionError> {
        let batch = t.len();
        let h = self.weight_len();
        if batch == 0 || x.len() != batch * h {
            return Err(DiffusionError::LengthMismatch {
                expected: batch.max(1) * h,
                actual: x.len(),
            });
        }
        let cfg = &self.config;
        let (hidden, heads) = (cfg.hidden, cfg.heads);
        let seq = cfg.sequence_len();
        let p = tape.params(&self.params);
        let lin = |x: Var, l: Linear| tape.add_row(tape.matmul(x, p[l.weight], true), p[l.bias]);

        let x = tape.constant(vec![batch, h], x);
        let emb: Vec<T> = t
            .iter()
            .flat_map(|&s| timestep_embedding(s, hidden, cfg.time_base))
            .map(T::from_f64)
            .collect();
        let mut tokens = vec![lin(tape.constant(vec![batch, hidden], emb), self.idx.time)];
        for (i, &proj) in self.idx.input.iter().enumerate() {
            let (offset, len) = cfg.layout.span(i);
            tokens.push(lin(tape.slice_cols(x, offset, len), proj));
        }
        // Token-major rows: row `s * batch + b` is token `s` of item `b`.
        let mut z = tape.add(
            tape.concat_rows(&tokens),
            tape.expand_rows(p[self.idx.position], batch),
        );

        let scale = T::from_f64(1.0 / ((hidden / heads) as f64).sqrt());
        for b in &self.idx.blocks {
            let a = tape.layer_norm(z, p[b.ln1.weight], p[b.ln1.bias]);
            let qkv = lin(a, b.qkv);
            let q = tape.split_heads(tape.slice_cols(qkv, 0, hidden), seq, batch, heads);
            let k = tape.split_heads(tape.slice_cols(qkv, hidden, hidden), seq, batch, heads);
            let v = tape.split_heads(tape.slice_cols(qkv, 2 * hidden, hidden), seq, batch, heads);
            let scores = tape.scale(tape.batch_matmul(q, k, true), scale);
            let attn = tape.batch_matmul(tape.softmax(scores), v, false);
            let merged = tape.merge_heads(attn, seq, batch, heads);
            z = tape.add(z, lin(merged, b.attn_out));

            let m = tape.layer_norm(z, p[b.ln2.weight], p[b.ln2.bias]);
            let ff = lin(tape.gelu(lin(m, b.fc)), b.fc_out);
            z = tape.add(z, ff);
        }
        let z = tape.layer_norm(z, p[self.idx.ln_final.weight], p[self.idx.ln_final.bias]);

        let outputs: Vec<Var> = self
            .idx
            .output
            .iter()
            .enumerate()
            .map(|(i, &proj)| lin(tape.slice_rows(z, (i + 1) * batch, batch), proj))
            .collect();
        Ok((tape.concat_cols(&outputs), p))
    }

    /// Prediction of the clean vectors for a batch of noisy ones (model space).
    pub fn predict(&self, x: &[T], t: &[usize]) -> Result<Vec<T>, DiffusionError> {
        for &s in t {
            if s == 0 || s > self.config.schedule.timesteps {
                return Err(DiffusionError::TimestepOutOfRange {
                    t: s,
                    max: self.config.schedule.timesteps,
                });
            }
        }
        let tape = Tape::new();
        let (out, _) = self.forward_tape(&tape, x.to_vec(), t)?;
        let values = tape.value(out).to_vec();
        Ok(values)
    }
}

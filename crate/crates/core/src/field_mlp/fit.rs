use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FieldError, FieldMlp, FieldMlpConfig, WeightVector};
use crate::geometry::LabeledPointBatch;
use crate::numerics::{AdamW, AdamWConfig, Tape};

/// Overfitting hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 800,
            batch_size: 2048,
            lr: 1e-4,
            seed: 0,
        }
    }
}

/// Where a fit starts from.
#[derive(Debug, Clone, Copy)]
pub enum FitInit<'a> {
    /// Fresh uniform initialization from this seed.
    Random(u64),
    /// Exact copy of existing weights.
    Weights(&'a WeightVector),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub final_loss: f64,
    /// IoU of the thresholded field against held-out labels, when supplied.
    pub iou: Option<f64>,
    pub epochs: usize,
    /// Wall-clock time; not serialized so that manifests are reproducible.
    #[serde(skip)]
    pub seconds: f64,
    /// Mean BCE of every epoch.
    pub loss_curve: Vec<f64>,
    pub warning: Option<String>,
}

/// Intersection over union of predicted (`logit > iso`) and labeled occupancy.
/// Two empty sets count as a perfect match.
pub fn iou(mlp: &FieldMlp, batch: &LabeledPointBatch) -> Result<f64, FieldError> {
    let logits = mlp.logits(batch.points())?;
    let threshold = mlp.config().iso_logit();
    let (mut inter, mut union) = (0usize, 0usize);
    for (&z, &label) in logits.iter().zip(batch.labels()) {
        let pred = z > threshold;
        let gt = label == 1;
        inter += usize::from(pred && gt);
        union += usize::from(pred || gt);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Minimizes mean BCE-with-logits over shuffled minibatches with Adam.
pub fn fit_field(
    batch: &LabeledPointBatch,
    config: FieldMlpConfig,
    init: FitInit<'_>,
    fit: &FitConfig,
    eval: Option<&LabeledPointBatch>,
) -> Result<(WeightVector, FitReport), FieldError> {
    let started = Instant::now();
    if batch.is_empty() {
        return Err(FieldError::EmptyBatch);
    }
    if batch.dim() != config.input_dim {
        return Err(FieldError::DimensionMismatch {
            expected: config.input_dim,
            actual: batch.dim(),
        });
    }
    let mut mlp = match init {
        FitInit::Random(seed) => FieldMlp::random(config, seed)?,
        FitInit::Weights(w) => {
            if w.config() != &config {
                return Err(FieldError::ConfigMismatch {
                    expected: config.describe(),
                    found: w.config().describe(),
                });
            }
            FieldMlp::unflatten(w)?
        }
    };

    let inside = batch.labels().iter().filter(|&&l| l == 1).count();
    let warning = (inside == 0 || inside == batch.len()).then(|| {
        let msg = format!("all {} labels belong to one class", batch.len());
        log::warn!("{msg}");
        msg
    });

    let mut optimizer = AdamW::new(
        AdamWConfig {
            lr: fit.lr,
            ..AdamWConfig::default()
        },
        mlp.params(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(fit.seed);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let dim = batch.dim();
    let batch_size = fit.batch_size.max(1);
    let mut loss_curve = Vec::with_capacity(fit.epochs);
    let mut points = Vec::with_capacity(batch_size * dim);
    let mut targets = Vec::with_capacity(batch_size);

    for _ in 0..fit.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            points.clear();
            targets.clear();
            for &i in chunk {
                points.extend_from_slice(batch.point(i));
                targets.push(batch.labels()[i] as f32);
            }
            let encoded = mlp.encode(&points)?;
            let (grads, vars) = {
                let tape = Tape::new();
                let (logits, vars) = mlp.forward_tape(&tape, encoded, chunk.len());
                let loss = tape.bce_with_logits(logits, &targets);
                epoch_loss += tape.scalar(loss) as f64 * chunk.len() as f64;
                (tape.backward(loss)?, vars)
            };
            mlp.params_mut().zero_grad();
            grads.accumulate_into(&vars, mlp.params_mut())?;
            optimizer.step(mlp.params_mut())?;
        }
        loss_curve.push(epoch_loss / batch.len() as f64);
    }

    let iou = eval.map(|e| iou(&mlp, e)).transpose()?;
    let report = FitReport {
        final_loss: loss_curve.last().copied().unwrap_or(f64::NAN),
        iou,
        epochs: fit.epochs,
        seconds: started.elapsed().as_secs_f64(),
        loss_curve,
        warning,
    };
    Ok((mlp.flatten(), report))
}

/// Fits every batch. With `shared_init`, the first shape is fit from a random
/// initialization and all others start from its result; otherwise each fit
/// gets its own random initialization. Fits after the first run in parallel.
pub fn fit_dataset(
    batches: &[LabeledPointBatch],
    evals: Option<&[LabeledPointBatch]>,
    config: FieldMlpConfig,
    fit: &FitConfig,
    shared_init: bool,
) -> Result<Vec<(WeightVector, FitReport)>, FieldError> {
    let Some(first) = batches.first() else {
        return Ok(Vec::new());
    };
    let eval_of = |i: usize| evals.and_then(|e| e.get(i));
    let shape_fit = |i: usize| FitConfig {
        seed: fit.seed.wrapping_add(i as u64),
        ..*fit
    };
    let head = fit_field(
        first,
        config,
        FitInit::Random(fit.seed),
        &shape_fit(0),
        eval_of(0),
    )?;
    let anchor = head.0.clone();
    let rest: Vec<_> = (1..batches.len())
        .into_par_iter()
        .map(|i| {
            let init = if shared_init {
                FitInit::Weights(&anchor)
            } else {
                FitInit::Random(fit.seed.wrapping_add(i as u64))
            };
            fit_field(&batches[i], config, init, &shape_fit(i), eval_of(i))
        })
        .collect::<Result<_, _>>()?;
    Ok(std::iter::once(head).chain(rest).collect())
}

/// One fitted shape in a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub mesh: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub report: FitReport,
}

/// JSON index of a fitted dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub field: FieldMlpConfig,
    pub fit: FitConfig,
    pub entries: Vec<DatasetEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{grid_supervision, procedural::icosphere, sample_supervision_3d};

    fn small_cfg() -> FieldMlpConfig {
        FieldMlpConfig {
            width: 32,
            ..FieldMlpConfig::default()
        }
    }

    #[test]
    fn all_inside_labels_fit_to_certain_occupancy() {
        let batch = grid_supervision(12, None, |_| true);
        let fit = FitConfig {
            epochs: 150,
            batch_size: 256,
            lr: 1e-2,
            seed: 0,
        };
        let (w, report) = fit_field(&batch, small_cfg(), FitInit::Random(0), &fit, None).unwrap();
        assert!(report.warning.is_some());
        let mlp = FieldMlp::unflatten(&w).unwrap();
        assert!(mlp
            .occupancy(batch.points())
            .unwrap()
            .iter()
            .all(|&o| o > 0.99));
    }

    #[test]
    fn fits_are_deterministic_and_loss_decreases() {
        let mesh = icosphere([0.0; 3], 0.3, 2);
        let batch = sample_supervision_3d(&mesh, 1000, 1000, 0.01, 1).unwrap();
        let fit = FitConfig {
            epochs: 20,
            batch_size: 256,
            lr: 1e-3,
            seed: 3,
        };
        let run =
            || fit_field(&batch, small_cfg(), FitInit::Random(9), &fit, Some(&batch)).unwrap();
        let (a, ra) = run();
        let (b, _) = run();
        assert_eq!(a, b);
        assert!(ra.loss_curve.last().unwrap() < &ra.loss_curve[0]);
        let iou = ra.iou.unwrap();
        assert!((0.0..=1.0).contains(&iou));
    }

    #[test]
    fn weight_init_is_copied_exactly() {
        let batch = grid_supervision(4, None, |p| p[0] > 0.0);
        let start = FieldMlp::random(small_cfg(), 5).unwrap().flatten();
        let fit = FitConfig {
            epochs: 0,
            ..FitConfig::default()
        };
        let (w, _) = fit_field(&batch, small_cfg(), FitInit::Weights(&start), &fit, None).unwrap();
        assert_eq!(w, start);
    }
}

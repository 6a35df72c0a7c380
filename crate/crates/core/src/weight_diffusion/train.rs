use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DiffusionError, NoiseSchedule, Normalization, TransformerDenoiser};
use crate::field_mlp::WeightVector;
use crate::numerics::{AdamW, AdamWConfig, NumericsError, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionTrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplier applied to the learning rate every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Standardize every coordinate with dataset statistics before diffusion.
    pub normalize: bool,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 2e-4,
            lr_decay: 0.8,
            decay_every: 200,
            epochs: 1000,
            weight_decay: 0.01,
            seed: 0,
            normalize: false,
        }
    }
}

impl DiffusionTrainConfig {
    /// Learning rate in effect during 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let every = self.decay_every.max(1);
        self.lr * self.lr_decay.powi((epoch / every) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// `epoch,mean_loss,lr` rows with a header line.
pub fn loss_csv(losses: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,mean_loss,lr\n");
    for l in losses {
        out.push_str(&format!("{},{},{}\n", l.epoch, l.loss, l.lr));
    }
    out
}

/// Resumable training state for a denoiser on a fixed dataset.
///
/// Every epoch draws its randomness from its own stream of the seeded
/// generator, so a resumed run continues exactly like an uninterrupted one.
pub struct DiffusionTrainer {
    pub model: TransformerDenoiser,
    pub optimizer: AdamW,
    pub config: DiffusionTrainConfig,
    schedule: NoiseSchedule,
    data: Vec<Vec<f32>>,
    epoch: usize,
    losses: Vec<EpochLoss>,
}

impl DiffusionTrainer {
    pub fn new(
        mut model: TransformerDenoiser,
        dataset: &[WeightVector],
        config: DiffusionTrainConfig,
    ) -> Result<Self, DiffusionError> {
        if dataset.is_empty() {
            return Err(DiffusionError::EmptyDataset);
        }
        if dataset.len() < 2 {
            log::warn!("training on a single weight vector");
        }
        let h = model.weight_len();
        let bad: Vec<usize> = dataset
            .iter()
            .enumerate()
            .filter(|(_, v)| v.len() != h)
            .map(|(i, _)| i)
            .collect();
        if !bad.is_empty() {
            return Err(DiffusionError::MixedLengths {
                expected: h,
                offenders: bad,
            });
        }
        let mut data: Vec<Vec<f32>> = dataset.iter().map(|v| v.values().to_vec()).collect();
        if config.normalize {
            let norm = Normalization::fit(&data);
            data.iter_mut().for_each(|v| norm.apply(v));
            model.normalization = Some(norm);
        } else {
            model.normalization = None;
        }
        let schedule = NoiseSchedule::new(model.config().schedule)?;
        let optimizer = AdamW::new(
            AdamWConfig {
                lr: config.lr,
                weight_decay: config.weight_decay,
                ..AdamWConfig::default()
            },
            model.params(),
        );
        Ok(Self {
            model,
            optimizer,
            config,
            schedule,
            data,
            epoch: 0,
            losses: Vec::new(),
        })
    }

    /// Continues from a saved model, optimizer and loss history.
    pub fn resume(
        model: TransformerDenoiser,
        optimizer: AdamW,
        losses: Vec<EpochLoss>,
        dataset: &[WeightVector],
        config: DiffusionTrainConfig,
    ) -> Result<Self, DiffusionError> {
        let mut trainer = Self::new(model, dataset, config)?;
        trainer.optimizer = optimizer;
        trainer.epoch = losses.len();
        trainer.losses = losses;
        Ok(trainer)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn losses(&self) -> &[EpochLoss] {
        &self.losses
    }

    fn batches(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let n = self.data.len();
        let bs = self.config.batch_size.max(1);
        if bs > n {
            return vec![(0..bs).map(|_| rng.random_range(0..n)).collect()];
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        order.chunks(bs).map(<[usize]>::to_vec).collect()
    }

    /// One pass over the dataset. On a non-finite loss or gradient the model
    /// and optimizer are left as they were before the failing step.
    pub fn run_epoch(&mut self) -> Result<EpochLoss, DiffusionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.epoch as u64);
        let lr = self.config.lr_at(self.epoch);
        self.optimizer.config.lr = lr;
        let h = self.model.weight_len();
        let timesteps = self.schedule.timesteps();

        let mut total = 0.0;
        let mut count = 0usize;
        for batch in self.batches(&mut rng) {
            let mut x0 = Vec::with_capacity(batch.len() * h);
            let mut xt = Vec::with_capacity(batch.len() * h);
            let mut ts = Vec::with_capacity(batch.len());
            for &i in &batch {
                let t = rng.random_range(1..=timesteps);
                let eps: Vec<f32> = (0..h).map(|_| rng.sample(StandardNormal)).collect();
                xt.extend(super::forward_diffuse(
                    &self.schedule,
                    &self.data[i],
                    t,
                    &eps,
                )?);
                x0.extend_from_slice(&self.data[i]);
                ts.push(t);
            }
            let (loss, grads, vars) = {
                let tape = Tape::new();
                let (pred, vars) = self.model.forward_tape(&tape, xt, &ts)?;
                let loss = tape.mse(pred, &x0);
                let value = tape.scalar(loss) as f64;
                if !value.is_finite() {
                    return Err(DiffusionError::Diverged { epoch: self.epoch });
                }
                (value, tape.backward(loss)?, vars)
            };
            let params = self.model.params_mut();
            params.zero_grad();
            grads.accumulate_into(&vars, params)?;
            match self.optimizer.step(self.model.params_mut()) {
                Err(NumericsError::NonFiniteGradient(_)) => {
                    return Err(DiffusionError::Diverged { epoch: self.epoch })
                }
                other => other?,
            }
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        let record = EpochLoss {
            epoch: self.epoch,
            loss: total / count as f64,
            lr,
        };
        self.losses.push(record);
        self.epoch += 1;
        Ok(record)
    }

    /// Runs until `config.epochs`, calling `on_epoch` after each epoch (for
    /// logging or periodic checkpoints).
    pub fn run(
        &mut self,
        mut on_epoch: impl FnMut(&Self, &EpochLoss) -> Result<(), DiffusionError>,
    ) -> Result<(), DiffusionError> {
        while self.epoch < self.config.epochs {
            let record = self.run_epoch()?;
            on_epoch(self, &record)?;
        }
        Ok(())
    }
}

/// Trains a fresh denoiser; returns it with the per-epoch mean losses.
pub fn train(
    dataset: &[WeightVector],
    model: TransformerDenoiser,
    config: DiffusionTrainConfig,
) -> Result<(TransformerDenoiser, Vec<EpochLoss>), DiffusionError> {
    let mut trainer = DiffusionTrainer::new(model, dataset, config)?;
    trainer.run(|_, _| Ok(()))?;
    Ok((trainer.model, trainer.losses))
}

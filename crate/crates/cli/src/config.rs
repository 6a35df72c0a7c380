//! The pipeline configuration: one JSON document with every setting.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use wfd_core::field_mlp::{FieldMlpConfig, FitConfig};
use wfd_core::weight_diffusion::{DenoiserConfig, DiffusionTrainConfig, TokenLayout};

use crate::dataset::{Family, ProceduralSpec};
use crate::Invalid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Mode {
    #[serde(rename = "3d")]
    #[value(name = "3d")]
    Static,
    #[serde(rename = "4d")]
    #[value(name = "4d")]
    Animated,
}

impl Mode {
    pub fn input_dim(self) -> usize {
        match self {
            Mode::Static => 3,
            Mode::Animated => 4,
        }
    }
}

/// Where the shapes come from: a directory of OBJ/OFF files or a generator.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub mesh_dir: Option<PathBuf>,
    pub procedural: Option<ProceduralSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub n_uniform: usize,
    pub n_near: usize,
    pub near_sigma: f32,
    /// Points per frame for 4D supervision, half uniform and half near.
    pub n_per_frame: usize,
    pub frames: usize,
    /// Resolution of the held-out lattice used to report fit IoU.
    pub eval_resolution: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_uniform: 100_000,
            n_near: 100_000,
            near_sigma: 0.01,
            n_per_frame: 200_000,
            frames: 16,
            eval_resolution: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    /// Samples kept after de-duplication; twice as many are drawn.
    pub count: usize,
    pub seed: u64,
    /// Denoising steps at which clean-vector predictions are written.
    pub trajectory: Vec<usize>,
    /// Chamfer distance (normalized clouds) under which two samples are duplicates.
    pub dedupe_threshold: f64,
    /// Grid resolution of the extraction used for de-duplication.
    pub dedupe_resolution: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            count: 8,
            seed: 0,
            trajectory: Vec::new(),
            dedupe_threshold: 0.02,
            dedupe_resolution: 48,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub resolution: usize,
    pub frames: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            frames: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub points_per_mesh: usize,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            points_per_mesh: 2048,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    #[serde(flatten)]
    pub diffusion: DiffusionTrainConfig,
    /// Epochs between resumable checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            diffusion: DiffusionTrainConfig::default(),
            checkpoint_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub run_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub sampling: SamplingConfig,
    pub field: FieldMlpConfig,
    pub fit: FitConfig,
    /// Seed every fit from the first fitted shape.
    pub shared_init: bool,
    pub denoiser: DenoiserConfig,
    pub train: TrainSettings,
    pub sample: SampleConfig,
    pub extract: ExtractConfig,
    pub metrics: MetricsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Static,
            run_dir: PathBuf::from("run"),
            dataset: DatasetConfig::default(),
            sampling: SamplingConfig::default(),
            field: FieldMlpConfig::default(),
            fit: FitConfig::default(),
            shared_init: true,
            denoiser: DenoiserConfig::default(),
            train: TrainSettings::default(),
            sample: SampleConfig::default(),
            extract: ExtractConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// A small configuration that runs end to end on a laptop CPU: eight
    /// procedural ellipsoids, reduced point counts and short schedules.
    pub fn desk() -> Self {
        Self {
            dataset: DatasetConfig {
                mesh_dir: None,
                procedural: Some(ProceduralSpec::default()),
            },
            sampling: SamplingConfig {
                n_uniform: 10_000,
                n_near: 10_000,
                n_per_frame: 4_000,
                ..SamplingConfig::default()
            },
            fit: FitConfig {
                epochs: 200,
                ..FitConfig::default()
            },
            train: TrainSettings {
                diffusion: DiffusionTrainConfig {
                    batch_size: 8,
                    epochs: 300,
                    ..DiffusionTrainConfig::default()
                },
                checkpoint_every: 50,
            },
            sample: SampleConfig {
                count: 4,
                ..SampleConfig::default()
            },
            ..Self::default()
        }
    }

    /// The desk preset for `mode`; 4D uses translating spheres.
    pub fn desk_for(mode: Mode) -> Self {
        let mut config = Self::desk().with_mode(mode);
        if mode == Mode::Animated {
            config.dataset.procedural = Some(ProceduralSpec {
                family: Family::default_for("translating_sphere").expect("known family"),
                ..ProceduralSpec::default()
            });
        }
        config
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| Invalid(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Overrides every seed in the document.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.fit.seed = seed;
        self.train.diffusion.seed = seed;
        self.sample.seed = seed;
        self.metrics.seed = seed;
        if let Some(p) = &mut self.dataset.procedural {
            p.seed = seed;
        }
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Field configuration with the input dimension implied by the mode.
    pub fn field_config(&self) -> FieldMlpConfig {
        self.field.with_input_dim(self.mode.input_dim())
    }

    /// Denoiser configuration whose token layout matches the field network.
    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            layout: TokenLayout::for_field(&self.field_config()),
            ..self.denoiser.clone()
        }
    }

    pub fn validate(&self) -> Result<(), Invalid> {
        self.field_config()
            .validate()
            .map_err(|e| Invalid(e.to_string()))?;
        self.denoiser_config()
            .validate()
            .map_err(|e| Invalid(e.to_string()))?;
        if self.fit.epochs == 0 || self.fit.batch_size == 0 || !(self.fit.lr > 0.0) {
            return Err(Invalid(
                "fit needs positive epochs, batch size and lr".into(),
            ));
        }
        let t = &self.train.diffusion;
        if t.batch_size == 0 || !(t.lr > 0.0) {
            return Err(Invalid("train needs a positive batch size and lr".into()));
        }
        if !(self.sampling.near_sigma > 0.0) {
            return Err(Invalid("near_sigma must be positive".into()));
        }
        if self.sampling.eval_resolution < 2 || self.extract.resolution < 2 {
            return Err(Invalid("grid resolutions must be at least 2".into()));
        }
        if self.mode == Mode::Animated && (self.sampling.frames == 0 || self.extract.frames == 0) {
            return Err(Invalid("4d mode needs at least one frame".into()));
        }
        if self.metrics.points_per_mesh == 0 {
            return Err(Invalid("points_per_mesh must be positive".into()));
        }
        if let Some(p) = &self.dataset.procedural {
            if p.family.is_animated() != (self.mode == Mode::Animated) {
                return Err(Invalid(format!(
                    "procedural family does not match mode {:?}",
                    self.mode
                )));
            }
        }
        Ok(())
    }
}

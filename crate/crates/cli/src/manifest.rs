//! The JSON index at the root of every run directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use wfd_core::field_mlp::DatasetEntry;
use wfd_core::metrics::MetricsReport;

use crate::config::PipelineConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub id: String,
    pub reason: String,
}

/// Every artifact of a run. Paths are relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub fits: Vec<DatasetEntry>,
    pub skipped: Vec<Skipped>,
    /// Ground-truth meshes of the fitted shapes, one per frame in 4D.
    pub references: Vec<PathBuf>,
    pub model: Option<PathBuf>,
    pub optimizer: Option<PathBuf>,
    pub loss_csv: Option<PathBuf>,
    pub samples: Vec<PathBuf>,
    pub trajectories: Vec<PathBuf>,
    pub meshes: Vec<PathBuf>,
    pub metrics: Option<MetricsReport>,
}

impl RunManifest {
    pub fn new(config: &PipelineConfig) -> Self {
        Self {
            config: Self::snapshot(config),
            fits: Vec::new(),
            skipped: Vec::new(),
            references: Vec::new(),
            model: None,
            optimizer: None,
            loss_csv: None,
            samples: Vec::new(),
            trajectories: Vec::new(),
            meshes: Vec::new(),
            metrics: None,
        }
    }

    /// The config as recorded: the run directory is the manifest's own
    /// location, so it is stored as `.` and runs in different places compare equal.
    pub fn snapshot(config: &PipelineConfig) -> PipelineConfig {
        PipelineConfig {
            run_dir: PathBuf::from("."),
            ..config.clone()
        }
    }

    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join(MANIFEST_FILE)
    }

    pub fn exists(run_dir: &Path) -> bool {
        Self::path(run_dir).is_file()
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = Self::path(run_dir);
        let text = fs::read_to_string(&path)
            .with_context(|| format!("reading {} (run `fit` first)", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn listed(&self) -> impl Iterator<Item = &PathBuf> {
        self.fits
            .iter()
            .map(|e| &e.checkpoint)
            .chain(&self.references)
            .chain(&self.model)
            .chain(&self.optimizer)
            .chain(&self.loss_csv)
            .chain(&self.samples)
            .chain(&self.trajectories)
            .chain(&self.meshes)
    }

    /// Writes `manifest.json`; every listed artifact must already exist.
    pub fn save(&self, run_dir: &Path) -> Result<()> {
        if let Some(missing) = self.listed().find(|p| !run_dir.join(p).exists()) {
            bail!("manifest lists missing artifact {}", missing.display());
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        let path = Self::path(run_dir);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_missing_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new(&PipelineConfig::desk());
        assert_eq!(m.config.run_dir, PathBuf::from("."));
        m.save(dir.path()).unwrap();
        assert_eq!(RunManifest::load(dir.path()).unwrap(), m);

        m.samples.push(PathBuf::from("samples/sample_000.field"));
        let err = m.save(dir.path()).unwrap_err();
        assert!(err.to_string().contains("sample_000"), "{err}");
    }
}

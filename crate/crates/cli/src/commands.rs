//! The pipeline stages. Each reads and updates the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use wfd_core::field_mlp::{
    field_to_grid, fit_dataset, load_checkpoint, save_checkpoint, DatasetEntry, WeightVector,
};
use wfd_core::geometry::{
    frame_time, load_mesh, marching_cubes, sample_surface_points, save_obj, TriangleMesh,
};
use wfd_core::metrics::{
    chamfer, evaluate, normalize_cloud, temporal_distance, CloudSequence, MetricsReport, PointCloud,
};
use wfd_core::weight_diffusion::{
    ddim_sample, dedupe, load_model, load_optimizer, loss_csv, save_model, save_optimizer,
    DiffusionTrainer, NoiseSchedule, TransformerDenoiser,
};

use crate::config::{Mode, PipelineConfig};
use crate::dataset::{self, mesh_files};
use crate::manifest::{RunManifest, Skipped};
use crate::Invalid;

const CHECKPOINT_EXT: &str = "field";

fn relative(run_dir: &Path, path: &Path) -> PathBuf {
    path.strip_prefix(run_dir).unwrap_or(path).to_owned()
}

fn fresh_dir(path: &Path) -> Result<()> {
    if path.exists() {
        fs::remove_dir_all(path).with_context(|| format!("clearing {}", path.display()))?;
    }
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn frame_name(stem: &str, frame: usize) -> String {
    format!("{stem}_f{frame:02}")
}

/// Fits one field per input shape and records the checkpoints.
pub fn cmd_fit(config: &PipelineConfig) -> Result<RunManifest> {
    config.validate()?;
    let run_dir = &config.run_dir;
    let items = dataset::inputs(config)?;
    let checkpoints = run_dir.join("checkpoints");
    let references = run_dir.join("reference");
    fresh_dir(&checkpoints)?;
    fresh_dir(&references)?;
    // Everything downstream belongs to the previous dataset.
    for stale in ["model", "samples", "meshes"] {
        let dir = run_dir.join(stale);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
    }

    let mut manifest = RunManifest::new(config);
    let mut kept = Vec::new();
    for (i, (id, item)) in items.iter().enumerate() {
        let prepared = item.meshes(config.extract.frames).and_then(|meshes| {
            let seed = config.fit.seed.wrapping_add(i as u64);
            item.supervision(config, seed).map(|s| (meshes, s))
        });
        match prepared {
            Ok((meshes, (batch, eval))) => {
                for (f, mesh) in meshes.iter().enumerate() {
                    let name = match config.mode {
                        Mode::Static => id.clone(),
                        Mode::Animated => frame_name(id, f),
                    };
                    let path = references.join(format!("{name}.obj"));
                    save_obj(mesh, &path)?;
                    manifest.references.push(relative(run_dir, &path));
                }
                kept.push((id.clone(), item, batch, eval));
            }
            Err(e) => {
                log::warn!("skipping {id}: {e:#}");
                manifest.skipped.push(Skipped {
                    id: id.clone(),
                    reason: format!("{e:#}"),
                });
            }
        }
    }
    if kept.is_empty() {
        bail!("none of the {} inputs could be fitted", items.len());
    }

    log::info!("fitting {} shapes", kept.len());
    let batches: Vec<_> = kept.iter().map(|k| k.2.clone()).collect();
    let evals: Vec<_> = kept.iter().map(|k| k.3.clone()).collect();
    let fits = fit_dataset(
        &batches,
        Some(&evals),
        config.field_config(),
        &config.fit,
        config.shared_init,
    )?;
    for ((id, item, _, _), (weights, report)) in kept.iter().zip(fits) {
        let path = checkpoints.join(format!("{id}.{CHECKPOINT_EXT}"));
        save_checkpoint(&weights, &path)?;
        if let Some(w) = &report.warning {
            log::warn!("{id}: {w}");
        }
        log::info!(
            "{id}: loss {:.4}, IoU {}",
            report.final_loss,
            report.iou.map_or("-".into(), |v| format!("{v:.4}"))
        );
        manifest.fits.push(DatasetEntry {
            id: id.clone(),
            mesh: match item {
                dataset::Item::Mesh(p) => Some(p.clone()),
                _ => None,
            },
            checkpoint: relative(run_dir, &path),
            report,
        });
    }
    manifest.save(run_dir)?;
    Ok(manifest)
}

fn load_fits(run_dir: &Path, manifest: &RunManifest) -> Result<Vec<WeightVector>> {
    let vectors: Vec<WeightVector> = manifest
        .fits
        .iter()
        .map(|e| load_checkpoint(run_dir.join(&e.checkpoint), None))
        .collect::<Result<_, _>>()?;
    let Some(first) = vectors.first() else {
        return Err(Invalid("the manifest lists no fitted checkpoints".into()).into());
    };
    let h = first.len();
    let offenders: Vec<String> = manifest
        .fits
        .iter()
        .zip(&vectors)
        .filter(|(_, v)| v.len() != h)
        .map(|(e, v)| format!("{} (h = {})", e.id, v.len()))
        .collect();
    if !offenders.is_empty() {
        return Err(Invalid(format!(
            "checkpoints differ in parameter count from {} (h = {h}): {}",
            manifest.fits[0].id,
            offenders.join(", ")
        ))
        .into());
    }
    Ok(vectors)
}

/// Trains the denoiser on the fitted weights, resuming from saved state.
pub fn cmd_train(config: &PipelineConfig) -> Result<RunManifest> {
    config.validate()?;
    let run_dir = &config.run_dir;
    let mut manifest = RunManifest::load(run_dir)?;
    let data = load_fits(run_dir, &manifest)?;
    if data.len() == 1 {
        log::warn!("only one checkpoint: the model can at best memorize it");
    }
    let model_dir = run_dir.join("model");
    fs::create_dir_all(&model_dir)?;
    let model_path = model_dir.join("denoiser.bin");
    let optimizer_path = model_dir.join("optimizer.bin");
    let csv_path = model_dir.join("loss.csv");
    let settings = config.train;

    let mut trainer = if model_path.is_file() && optimizer_path.is_file() {
        let model = load_model(&model_path)?;
        let (optimizer, losses) = load_optimizer(&optimizer_path)?;
        log::info!("resuming training after epoch {}", losses.len());
        DiffusionTrainer::resume(model, optimizer, losses, &data, settings.diffusion)?
    } else {
        let model = TransformerDenoiser::new(config.denoiser_config(), settings.diffusion.seed)?;
        DiffusionTrainer::new(model, &data, settings.diffusion)?
    };

    let save = |t: &DiffusionTrainer| -> Result<()> {
        let tmp_model = model_dir.join("denoiser.bin.tmp");
        let tmp_opt = model_dir.join("optimizer.bin.tmp");
        save_model(&t.model, &tmp_model)?;
        save_optimizer(&t.optimizer, t.losses(), &tmp_opt)?;
        fs::rename(&tmp_model, &model_path)?;
        fs::rename(&tmp_opt, &optimizer_path)?;
        fs::write(&csv_path, loss_csv(t.losses()))?;
        Ok(())
    };
    let every = settings.checkpoint_every.max(1);
    let mut failure = None;
    trainer.run(|t, record| {
        if record.epoch % 10 == 0 || record.epoch + 1 == t.config.epochs {
            log::info!("epoch {}: loss {:.6}", record.epoch, record.loss);
        }
        if (record.epoch + 1) % every == 0 {
            if let Err(e) = save(t) {
                failure = Some(e);
            }
        }
        Ok(())
    })?;
    if let Some(e) = failure {
        return Err(e.context("saving training state"));
    }
    save(&trainer)?;

    manifest.model = Some(relative(run_dir, &model_path));
    manifest.optimizer = Some(relative(run_dir, &optimizer_path));
    manifest.loss_csv = Some(relative(run_dir, &csv_path));
    manifest.save(run_dir)?;
    Ok(manifest)
}

/// Seeds of the raw samples drawn for sampling seed `seed`.
pub fn sample_seeds(seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64)
        .map(|i| seed.wrapping_mul(1 << 20).wrapping_add(i))
        .collect()
}

/// Marching-cubes surface of a field; 4D fields are sliced at `time`.
pub fn extract_surface(
    weights: &WeightVector,
    resolution: usize,
    time: Option<f32>,
) -> Result<TriangleMesh> {
    let grid = field_to_grid(weights, resolution, time)?.padded(0.0);
    Ok(marching_cubes(&grid, weights.config().iso))
}

/// Normalized surface samples of a mesh.
pub fn mesh_cloud(mesh: &TriangleMesh, points: usize, seed: u64) -> Result<PointCloud> {
    let pts = sample_surface_points(mesh, points, seed)?;
    Ok(normalize_cloud(&PointCloud::new(pts)?)?)
}

/// Draws `2n` samples, keeps up to `n` distinct ones and writes them.
pub fn cmd_sample(config: &PipelineConfig) -> Result<RunManifest> {
    config.validate()?;
    let run_dir = &config.run_dir;
    let mut manifest = RunManifest::load(run_dir)?;
    let n = config.sample.count;
    if n == 0 {
        log::info!("sample count is 0; nothing to do");
        return Ok(manifest);
    }
    let model_path = manifest
        .model
        .as_ref()
        .map(|p| run_dir.join(p))
        .ok_or_else(|| Invalid("no trained model (run `train` first)".into()))?;
    let model = load_model(&model_path)?;
    let schedule = NoiseSchedule::new(model.config().schedule)?;
    let field = config.field_config();
    if model.weight_len() != field.param_count() {
        return Err(Invalid(format!(
            "model generates {} weights, the field config has {}",
            model.weight_len(),
            field.param_count()
        ))
        .into());
    }

    let seeds = sample_seeds(config.sample.seed, 2 * n);
    log::info!("drawing {} samples", seeds.len());
    let raw = ddim_sample(&model, &schedule, &seeds, &config.sample.trajectory)?;
    let vectors: Vec<WeightVector> = raw
        .iter()
        .map(|s| WeightVector::new(field, s.weights.clone()))
        .collect::<Result<_, _>>()?;
    let time = (config.mode == Mode::Animated).then(|| frame_time(0, config.extract.frames));
    let clouds: Vec<Result<PointCloud>> = vectors
        .par_iter()
        .map(|v| {
            let mesh = extract_surface(v, config.sample.dedupe_resolution, time)?;
            mesh_cloud(&mesh, config.metrics.points_per_mesh, config.metrics.seed)
        })
        .collect();
    let mut kept = dedupe(clouds, config.sample.dedupe_threshold);
    if kept.len() < n {
        log::warn!("only {} of {n} requested samples are distinct", kept.len());
    }
    kept.truncate(n);

    let samples_dir = run_dir.join("samples");
    fresh_dir(&samples_dir)?;
    let trajectory_dir = samples_dir.join("trajectory");
    manifest.samples.clear();
    manifest.trajectories.clear();
    for (k, &i) in kept.iter().enumerate() {
        let stem = format!("sample_{k:03}");
        let path = samples_dir.join(format!("{stem}.{CHECKPOINT_EXT}"));
        save_checkpoint(&vectors[i], &path)?;
        manifest.samples.push(relative(run_dir, &path));
        for (step, values) in &raw[i].trajectory {
            fs::create_dir_all(&trajectory_dir)?;
            let path = trajectory_dir.join(format!("{stem}_step{step:04}.{CHECKPOINT_EXT}"));
            save_checkpoint(&WeightVector::new(field, values.clone())?, &path)?;
            manifest.trajectories.push(relative(run_dir, &path));
        }
    }
    manifest.config.sample = config.sample.clone();
    manifest.save(run_dir)?;
    Ok(manifest)
}

/// Writes one OBJ per checkpoint (per frame in 4D) into `out` and returns the paths.
pub fn cmd_extract(
    checkpoints: &[PathBuf],
    resolution: usize,
    frames: usize,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    if resolution < 2 {
        return Err(Invalid("extraction resolution must be at least 2".into()).into());
    }
    fs::create_dir_all(out)?;
    let jobs: Vec<(PathBuf, WeightVector, Option<f32>)> = checkpoints
        .iter()
        .map(|path| {
            let weights = load_checkpoint(path, None)?;
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("field")
                .to_owned();
            Ok(match weights.config().input_dim {
                4 => (0..frames.max(1))
                    .map(|f| {
                        let name = out.join(format!("{}.obj", frame_name(&stem, f)));
                        (name, weights.clone(), Some(frame_time(f, frames)))
                    })
                    .collect(),
                _ => vec![(out.join(format!("{stem}.obj")), weights, None)],
            })
        })
        .collect::<Result<Vec<Vec<_>>>>()?
        .into_iter()
        .flatten()
        .collect();
    jobs.par_iter()
        .map(|(path, weights, time)| {
            let mesh = extract_surface(weights, resolution, *time)?;
            if mesh.is_empty() {
                log::warn!("{}: empty surface", path.display());
            }
            save_obj(&mesh, path)?;
            Ok(path.clone())
        })
        .collect()
}

/// Extracts the run's samples into `meshes/`.
pub fn extract_samples(config: &PipelineConfig) -> Result<RunManifest> {
    let run_dir = &config.run_dir;
    let mut manifest = RunManifest::load(run_dir)?;
    let checkpoints: Vec<PathBuf> = manifest.samples.iter().map(|p| run_dir.join(p)).collect();
    let out = run_dir.join("meshes");
    fresh_dir(&out)?;
    let meshes = cmd_extract(
        &checkpoints,
        config.extract.resolution,
        config.extract.frames,
        &out,
    )?;
    manifest.meshes = meshes.iter().map(|p| relative(run_dir, p)).collect();
    manifest.save(run_dir)?;
    Ok(manifest)
}

/// Mesh files of a directory grouped by shape: one file per shape in 3D,
/// `<stem>_fNN` frames in 4D.
pub fn group_meshes(dir: &Path, mode: Mode) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let files = mesh_files(dir)?;
    Ok(match mode {
        Mode::Static => files
            .into_iter()
            .map(|p| {
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
                (stem.to_owned(), vec![p])
            })
            .collect(),
        Mode::Animated => {
            let mut groups: BTreeMap<String, Vec<(usize, PathBuf)>> = BTreeMap::new();
            for p in files {
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
                let split = stem
                    .rsplit_once("_f")
                    .and_then(|(base, f)| f.parse::<usize>().ok().map(|f| (base.to_owned(), f)));
                match split {
                    Some((base, f)) => groups.entry(base).or_default().push((f, p)),
                    None => log::warn!("{}: not named <shape>_fNN; ignored", p.display()),
                }
            }
            groups
                .into_iter()
                .map(|(base, mut frames)| {
                    frames.sort();
                    (base, frames.into_iter().map(|(_, p)| p).collect())
                })
                .collect()
        }
    })
}

fn sample_mesh(path: &Path, points: usize, seed: u64) -> Result<Vec<[f32; 3]>> {
    let mesh = load_mesh(path)?;
    Ok(sample_surface_points(&mesh, points, seed)?)
}

/// Surface samples of every shape in `dir`; unreadable shapes are excluded.
fn shape_clouds(dir: &Path, config: &PipelineConfig) -> Result<Vec<CloudSequence>> {
    let groups = group_meshes(dir, config.mode)?;
    let k = config.metrics.points_per_mesh;
    let clouds: Vec<Option<CloudSequence>> = groups
        .par_iter()
        .enumerate()
        .map(|(i, (name, files))| {
            let seed = config.metrics.seed.wrapping_add(1000 * i as u64);
            let frames: Result<Vec<Vec<[f32; 3]>>> = files
                .iter()
                .enumerate()
                .map(|(f, p)| sample_mesh(p, k, seed.wrapping_add(f as u64)))
                .collect();
            // Frames of a sequence share one normalization so motion is kept.
            let sequence = frames.and_then(|frames| {
                let joint = PointCloud::new(frames.concat())?;
                let normalized = normalize_cloud(&joint)?;
                let parts = normalized
                    .points()
                    .chunks(k)
                    .map(|c| PointCloud::new(c.to_vec()))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(CloudSequence::new(parts)?)
            });
            match sequence {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!("excluding {name}: {e:#}");
                    None
                }
            }
        })
        .collect();
    let mut clouds: Vec<CloudSequence> = clouds.into_iter().flatten().collect();
    if let Some(frames) = clouds.first().map(|c| c.frames().len()) {
        let before = clouds.len();
        clouds.retain(|c| c.frames().len() == frames);
        if clouds.len() < before {
            log::warn!(
                "excluding {} shapes without {frames} frames",
                before - clouds.len()
            );
        }
    }
    Ok(clouds)
}

/// MMD, COV and 1-NNA of the shapes in `generated` against those in `reference`.
pub fn cmd_eval(
    config: &PipelineConfig,
    generated: &Path,
    reference: &Path,
) -> Result<MetricsReport> {
    let gen = shape_clouds(generated, config)?;
    let reference_clouds = shape_clouds(reference, config)?;
    for (set, name) in [(&gen, generated), (&reference_clouds, reference)] {
        if set.len() < 2 {
            bail!(
                "{} holds {} usable shapes; at least 2 are needed",
                name.display(),
                set.len()
            );
        }
    }
    let report = match config.mode {
        Mode::Static => evaluate(&gen, &reference_clouds, |a, b| {
            chamfer(&a.frames()[0], &b.frames()[0])
        })?,
        Mode::Animated => evaluate(&gen, &reference_clouds, |a, b| {
            temporal_distance(a, b).unwrap_or(f64::INFINITY)
        })?,
    };
    Ok(report)
}

/// Evaluates the run's extracted meshes against its reference meshes.
pub fn eval_run(config: &PipelineConfig) -> Result<RunManifest> {
    let run_dir = &config.run_dir;
    let mut manifest = RunManifest::load(run_dir)?;
    let report = cmd_eval(config, &run_dir.join("meshes"), &run_dir.join("reference"))?;
    print!("{}", report.to_table());
    manifest.metrics = Some(report);
    manifest.save(run_dir)?;
    Ok(manifest)
}

/// fit, train, sample, extract and eval in sequence.
pub fn pipeline(config: &PipelineConfig) -> Result<RunManifest> {
    cmd_fit(config)?;
    cmd_train(config)?;
    cmd_sample(config)?;
    extract_samples(config)?;
    eval_run(config)
}

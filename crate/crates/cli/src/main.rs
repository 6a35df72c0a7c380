use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use wfd_cli::commands::{self, eval_run, extract_samples};
use wfd_cli::{Invalid, Mode, PipelineConfig, RunManifest};

#[derive(Parser)]
#[command(
    name = "wfd",
    version,
    about = "Weight-space diffusion over occupancy fields"
)]
struct Cli {
    /// Pipeline configuration (JSON). Defaults to the run's manifest snapshot.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Overrides the run directory.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Desk,
}

#[derive(Subcommand)]
enum Command {
    /// Write a configuration with every default filled in.
    InitConfig {
        #[arg(long, value_enum, default_value = "full")]
        preset: Preset,
        /// Output file; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fit one occupancy field per input shape.
    Fit,
    /// Train the diffusion model on the fitted weights.
    Train,
    /// Generate new weight vectors.
    Sample {
        /// Number of distinct samples to keep.
        #[arg(short, long)]
        n: Option<usize>,
        /// Comma-separated denoising steps to snapshot.
        #[arg(long, value_delimiter = ',')]
        trajectory: Option<Vec<usize>>,
    },
    /// Extract meshes from field checkpoints (the run's samples by default).
    Extract {
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        /// Output directory for explicit checkpoints.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Score generated meshes against reference meshes.
    Eval {
        #[arg(long)]
        generated: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Write the report as JSON here.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run fit, train, sample, extract and eval.
    Pipeline,
}

fn resolve_config(cli: &Cli, preset: Option<Preset>) -> Result<PipelineConfig> {
    let mut config = match (&cli.config, preset) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Some(Preset::Desk)) => PipelineConfig::desk_for(cli.mode.unwrap_or(Mode::Static)),
        (None, Some(Preset::Full)) => PipelineConfig::default(),
        (None, None) => {
            let run_dir = cli.run_dir.clone().unwrap_or_else(|| "run".into());
            if RunManifest::exists(&run_dir) {
                RunManifest::load(&run_dir)?.config
            } else {
                PipelineConfig::default()
            }
        }
    };
    if let Some(mode) = cli.mode {
        config = config.with_mode(mode);
    }
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    if let Some(dir) = &cli.run_dir {
        config.run_dir = dir.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    match &cli.command {
        Command::InitConfig { preset, output } => {
            let config = resolve_config(&cli, Some(*preset))?;
            let json = config.to_json() + "\n";
            match output {
                Some(path) => {
                    fs::write(path, json).with_context(|| format!("writing {}", path.display()))?
                }
                None => print!("{json}"),
            }
        }
        Command::Fit => {
            commands::cmd_fit(&resolve_config(&cli, None)?)?;
        }
        Command::Train => {
            commands::cmd_train(&resolve_config(&cli, None)?)?;
        }
        Command::Sample { n, trajectory } => {
            let mut config = resolve_config(&cli, None)?;
            if let Some(n) = n {
                config.sample.count = *n;
            }
            if let Some(steps) = trajectory {
                config.sample.trajectory = steps.clone();
            }
            commands::cmd_sample(&config)?;
        }
        Command::Extract {
            checkpoints,
            resolution,
            frames,
            out,
        } => {
            let mut config = resolve_config(&cli, None)?;
            if let Some(r) = resolution {
                config.extract.resolution = *r;
            }
            if let Some(f) = frames {
                config.extract.frames = *f;
            }
            if checkpoints.is_empty() {
                extract_samples(&config)?;
            } else {
                let out = out.clone().unwrap_or_else(|| config.run_dir.join("meshes"));
                let written = commands::cmd_extract(
                    checkpoints,
                    config.extract.resolution,
                    config.extract.frames,
                    &out,
                )?;
                log::info!("wrote {} meshes to {}", written.len(), out.display());
            }
        }
        Command::Eval {
            generated,
            reference,
            out,
        } => {
            let config = resolve_config(&cli, None)?;
            if generated.is_none() && reference.is_none() && out.is_none() {
                eval_run(&config)?;
            } else {
                let run_dir = &config.run_dir;
                let generated = generated.clone().unwrap_or_else(|| run_dir.join("meshes"));
                let reference = reference
                    .clone()
                    .unwrap_or_else(|| run_dir.join("reference"));
                let report = commands::cmd_eval(&config, &generated, &reference)?;
                print!("{}", report.to_table());
                if let Some(path) = out {
                    fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
                        .with_context(|| format!("writing {}", path.display()))?;
                }
            }
        }
        Command::Pipeline => {
            commands::pipeline(&resolve_config(&cli, None)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

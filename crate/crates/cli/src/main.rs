use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uavrelay::config::RunConfig;
use uavrelay::eval::PolicyArtifact;
use uavrelay::pipeline::{self, StageReport};
use uavrelay::repr::{CodecKind, ReprConfig};
use uavrelay::Error;

/// Terrain-aware UAV relay simulation and offline RL pipeline.
#[derive(Parser)]
#[command(name = "uavrelay", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic terrain map.
    GenMap {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out the behavior policies into an offline dataset.
    GenDataset {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a PCA, autoencoder or VAE codec on dataset observations.
    TrainRepr {
        #[arg(long)]
        config: Option<PathBuf>,
        /// pca, ae or vae; defaults to the config value.
        #[arg(long)]
        kind: Option<CodecKind>,
        /// Latent width; defaults to the config value.
        #[arg(long)]
        latent: Option<usize>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace every observation in a dataset by its latent code.
    Encode {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a conservative Q-learning policy on raw or latent data.
    TrainCql {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Codec that produced latent data.
        #[arg(long)]
        codec: Option<PathBuf>,
        /// Training seed; defaults to the config's global seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained policy and write metrics CSVs.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        codec: Option<PathBuf>,
        /// Method label used in the CSVs.
        #[arg(long, default_value = "policy")]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-step feasibility bound for one episode with a hovering UAV.
    Csfub {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render SVG charts from a metrics directory.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole comparison; finished stages are skipped on rerun.
    Reproduce {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> uavrelay::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(command: Command) -> uavrelay::Result<String> {
    let report: StageReport = match command {
        Command::GenMap { config, out } => {
            pipeline::gen_map(&load_config(config.as_deref())?, &out, false)?
        }
        Command::GenDataset { config, map, out } => {
            pipeline::gen_dataset(&load_config(config.as_deref())?, &map, &out, false)?
        }
        Command::TrainRepr {
            config,
            kind,
            latent,
            data,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let rc = ReprConfig {
                kind: kind.unwrap_or(cfg.repr.kind),
                latent_dim: latent.unwrap_or(cfg.repr.latent_dim),
                ..cfg.repr.clone()
            };
            rc.validate(cfg.env.obs_dim())?;
            pipeline::train_repr(&cfg, &rc, &data, &out, false)?
        }
        Command::Encode { codec, data, out } => pipeline::encode(&codec, &data, &out, false)?,
        Command::TrainCql {
            config,
            data,
            codec,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let seed = seed.unwrap_or(cfg.seed);
            pipeline::train_cql(&cfg, &data, codec.as_deref(), seed, &out, false)?
        }
        Command::Eval {
            config,
            map,
            policy,
            codec,
            method,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let seed = uavrelay::cql::PolicyBundle::load(&policy)?.seed;
            let artifact = PolicyArtifact {
                method,
                seed,
                policy,
                codec,
            };
            pipeline::evaluate(&cfg, &map, &[artifact], &out, false)?
        }
        Command::Csfub {
            config,
            map,
            seed,
            out,
        } => pipeline::csfub(&load_config(config.as_deref())?, &map, seed, &out)?,
        Command::Plot { metrics, out } => pipeline::plot(&metrics, &out, false)?,
        Command::Reproduce { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let reports = pipeline::reproduce(&cfg, &out, |r| eprintln!("{}", r.summary))?;
            let ran = reports.iter().filter(|r| !r.skipped).count();
            return Ok(format!(
                "reproduce: {} stages ({ran} run, {} up to date), comparison at {}",
                reports.len(),
                reports.len() - ran,
                out.join("metrics").join("comparison.csv").display()
            ));
        }
    };
    Ok(report.summary)
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let detail = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error: usage: {}", one_line(detail));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}

fn report(e: &Error) {
    eprintln!("error: {}", one_line(&e.to_string()));
}

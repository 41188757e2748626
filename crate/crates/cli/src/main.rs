use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use arbor_cli::commands::{self, RaterSource, SynthArgs, UsageError};
use arbor_core::config::Config;
use arbor_pipeline::{RunDir, RunInputs};
use clap::{Parser, Subcommand};
use log::error;

#[derive(Parser)]
#[command(name = "arbor", version, about = "Weakly supervised individual tree segmentation for airborne lidar")]
struct Cli {
    /// JSON configuration file; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration value, e.g. `--set loop.max_iterations=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic forest scene with ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        trees: usize,
        /// Scene edge length, meters.
        #[arg(long, default_value_t = 100.0)]
        extent: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Read an ASCII point file (x y z [i] [r g b]; .csv for comma separated).
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split an ingested cloud into tiles and normalize heights above ground.
    Tile {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Watershed initialization of every tile.
    SegmentInit {
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the rating API (and the rating UI when server.static_dir is set).
    Serve {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Rate clusters of a synthetic scene as a careful operator would.
    SimulateRatings {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        /// Scene directory written by `synth`.
        #[arg(long)]
        truth: PathBuf,
        /// Number of clusters to rate; all when omitted.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train the rating model on a generated corpus or a run's human ratings.
    TrainRater {
        #[arg(long)]
        out: PathBuf,
        /// Metrics report (JSON); defaults to <out>.json.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Generate a corpus with this many clusters per class.
        #[arg(long, conflicts_with = "run")]
        corpus: Option<usize>,
        #[arg(long, default_value_t = 100)]
        train_per_class: usize,
        #[arg(long, default_value_t = 2024)]
        corpus_seed: u64,
        #[arg(long, requires_all = ["tiles", "clusters"])]
        run: Option<PathBuf>,
        #[arg(long)]
        tiles: Option<PathBuf>,
        #[arg(long)]
        clusters: Option<PathBuf>,
    },
    /// Run or resume the rate / pseudo-label / retrain loop.
    Loop {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        tiles: Option<PathBuf>,
        #[arg(long)]
        clusters: Option<PathBuf>,
        /// Pretrained rating model; trained from the run's ratings otherwise.
        #[arg(long)]
        rater: Option<PathBuf>,
        /// Stop after this iteration even if the loop has not stabilized.
        #[arg(long)]
        halt_after: Option<usize>,
    },
    /// Score a run against the ground truth of a synthetic scene.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli, run: Option<&Path>) -> Result<Config> {
    let base = match (&cli.config, run.map(|r| RunDir::new(r).config_path())) {
        (Some(path), _) => Config::load(path).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?,
        (None, Some(snapshot)) if snapshot.is_file() => Config::load(&snapshot)?,
        _ => Config::default(),
    };
    Ok(base.with_overrides(&cli.overrides).map_err(|e| UsageError(e.to_string()))?)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { out, trees, extent, seed } => commands::synth(
            &load_config(&cli, None)?,
            &SynthArgs {
                out: out.clone(),
                trees: *trees,
                extent: *extent,
                seed: *seed,
            },
        ),
        Command::Ingest { input, out } => commands::ingest(&load_config(&cli, None)?, input, out),
        Command::Tile { input, out } => commands::tile(&load_config(&cli, None)?, input, out),
        Command::SegmentInit { tiles, out } => commands::segment_init(&load_config(&cli, None)?, tiles, out).map(drop),
        Command::Serve { run, tiles, clusters, port } => commands::serve(&load_config(&cli, None)?, run, tiles, clusters, *port),
        Command::SimulateRatings {
            run,
            clusters,
            truth,
            sample,
            seed,
        } => commands::simulate(run, clusters, truth, *sample, *seed).map(drop),
        Command::TrainRater {
            out,
            report,
            corpus,
            train_per_class,
            corpus_seed,
            run,
            tiles,
            clusters,
        } => {
            let source = match (corpus, run) {
                (Some(n), _) => RaterSource::Corpus {
                    per_class: *n,
                    train_per_class: *train_per_class,
                    seed: *corpus_seed,
                },
                (None, Some(run)) => RaterSource::Run {
                    run: run.clone(),
                    tiles: tiles.clone().context("--tiles is required with --run")?,
                    clusters: clusters.clone().context("--clusters is required with --run")?,
                },
                (None, None) => return Err(UsageError("train-rater needs --corpus N or --run DIR".into()).into()),
            };
            let report = report.clone().unwrap_or_else(|| out.with_extension("json"));
            commands::train_rater_cmd(&load_config(&cli, None)?, &source, out, &report).map(drop)
        }
        Command::Loop {
            run,
            tiles,
            clusters,
            rater,
            halt_after,
        } => {
            let cfg = load_config(&cli, Some(run))?;
            let dir = RunDir::new(run);
            let inputs = match (tiles, clusters) {
                (Some(t), Some(c)) => RunInputs {
                    tiles: t.clone(),
                    clusters: c.clone(),
                    rater: rater.clone(),
                },
                (None, None) if dir.inputs_path().is_file() => dir.inputs()?,
                _ => return Err(UsageError("loop needs --tiles and --clusters on its first run".into()).into()),
            };
            commands::run_loop_cmd(&cfg, run, &inputs, *halt_after)
        }
        Command::Eval { run, gt, out } => commands::eval(run, gt, out.as_deref()).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

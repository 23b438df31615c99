use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use meshgcn::eval::AlignMode;
use meshgcn_cli::commands::{self, EvaluateArgs, Sweep};
use meshgcn_cli::train::{train_autoencoder, train_image_encoder, TrainOptions};
use meshgcn_cli::{data, CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "mgcn", version, about = "Spectral mesh autoencoder pipeline")]
struct Cli {
    /// Worker threads; overrides MGCN_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Omit wall-clock timings so every artifact is reproducible byte for byte.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample shapes from the toy shape model and render them.
    Generate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the mesh autoencoder.
    TrainAe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs in total.
        #[arg(long)]
        until_epoch: Option<usize>,
    },
    /// Train the image encoder against the frozen decoder.
    #[command(name = "train-2d")]
    Train2d {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        until_epoch: Option<usize>,
    },
    /// Image to mesh; prints the latent and timing as JSON.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a reconstruction against a scan.
    Evaluate {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        scan: PathBuf,
        /// Reconstruction landmarks (default: `<stem>_landmarks.json`).
        #[arg(long)]
        landmarks: Option<PathBuf>,
        /// Scan landmarks, paired with the reconstruction's by name.
        #[arg(long)]
        scan_landmarks: Option<PathBuf>,
        /// Report JSON.
        #[arg(long)]
        out: PathBuf,
        /// Colored PLY of the per-vertex error.
        #[arg(long)]
        error_map: Option<PathBuf>,
        #[arg(long, default_value_t = 5.0)]
        margin: f64,
        #[arg(long, value_enum, default_value = "rigid")]
        align: Align,
        #[arg(long, default_value_t = meshgcn::eval::DEFAULT_ERROR_CAP)]
        cap: f64,
    },
    /// Retrain over a list of settings and tabulate validation MEE.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        sweep: Sweep,
        /// Comma-separated numbers, or for tap sets `;`-separated lists
        /// such as `none;0,1`.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Align {
    Rigid,
    Similarity,
}

fn init_threads(threads: Option<usize>) -> CliResult<()> {
    let env = std::env::var("MGCN_THREADS").ok();
    let n = match (threads, env) {
        (Some(n), _) => Some(n),
        (None, Some(v)) => Some(v.parse().map_err(|_| CliError::Config(format!("MGCN_THREADS={v:?} is not a number")))?),
        (None, None) => None,
    };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads(cli.threads)?;
    let options = |resume, until_epoch| TrainOptions {
        deterministic: cli.deterministic,
        resume,
        until_epoch,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Generate { config } => {
            let manifest = data::generate(&RunConfig::load(&config)?)?;
            if !cli.quiet {
                eprintln!("wrote {} train and {} val pairs", manifest.train.len(), manifest.val.len());
            }
        }
        Command::TrainAe { config, resume, until_epoch } => {
            train_autoencoder(&RunConfig::load(&config)?, &options(resume, until_epoch))?;
        }
        Command::Train2d { config, resume, until_epoch } => {
            train_image_encoder(&RunConfig::load(&config)?, &options(resume, until_epoch))?;
        }
        Command::Reconstruct { config, image, out } => {
            let result = commands::reconstruct(&RunConfig::load(&config)?, &image, &out, cli.deterministic)?;
            println!("{}", serde_json::to_string(&result)?);
        }
        Command::Evaluate {
            recon,
            scan,
            landmarks,
            scan_landmarks,
            out,
            error_map,
            margin,
            align,
            cap,
        } => {
            let report = commands::evaluate(&EvaluateArgs {
                reconstruction: recon,
                scan,
                landmarks,
                scan_landmarks,
                out,
                error_map,
                margin,
                align: match align {
                    Align::Rigid => AlignMode::Rigid,
                    Align::Similarity => AlignMode::Similarity,
                },
                cap,
            })?;
            if !cli.quiet {
                eprintln!("combined error {:.4} mm", report.combined);
            }
        }
        Command::Ablate { config, sweep, values, out } => {
            let values = commands::parse_sweep_values(sweep, &values)?;
            let rows = commands::ablate(&RunConfig::load(&config)?, sweep, &values)?;
            commands::write_csv(&rows, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mgcn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `thermocloud` command-line interface.
//!
//! Exit status: 0 success, 1 usage or validation error, 2 I/O error,
//! 3 parse error, 4 degenerate geometry.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thermocloud::fusion::Interpolation;
use thermocloud::sfm_io::PlyMode;
use thermocloud::synth::SceneSpec;

use commands::{cmd_calibrate, cmd_fuse, cmd_synth, Outcome, SynthArgs};
use config::{Overrides, PipelineConfig};
use error::{exit, CliError};

#[derive(Debug, Parser)]
#[command(name = "thermocloud", version, about = "Thermal texturing of dense RGB reconstructions")]
struct Cli {
    /// Worker threads for fusion; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print only the run manifest on standard output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate the rig from board corners.
    Calibrate(PipelineArgs),
    /// Scale the reconstruction and texture it with thermal frames.
    Fuse(PipelineArgs),
    /// Write a synthetic fixture directory.
    Synth(SynthFlags),
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    ply_mode: Option<PlyModeArg>,
    #[arg(long, value_enum)]
    interpolation: Option<InterpolationArg>,
    #[arg(long, value_enum)]
    zbuffer: Option<Switch>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlyModeArg {
    Ascii,
    Binary,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InterpolationArg {
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FieldArg {
    Linear,
    HotSpot,
}

#[derive(Debug, Args)]
struct SynthFlags {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 5000)]
    points: usize,
    #[arg(long, default_value_t = 400)]
    sparse: usize,
    /// Stereo baseline in meters.
    #[arg(long, default_value_t = 0.12)]
    baseline: f64,
    /// Model units per meter of the exported reconstruction.
    #[arg(long, default_value_t = 0.37)]
    model_scale: f64,
    /// Corner and sparse-measurement noise in pixels.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Calibration board views.
    #[arg(long, default_value_t = 10)]
    views: usize,
    #[arg(long, value_enum, default_value_t = FieldArg::Linear)]
    field: FieldArg,
}

impl PipelineArgs {
    fn load(&self) -> Result<PipelineConfig, CliError> {
        let overrides = Overrides {
            ply_mode: self.ply_mode.map(|m| match m {
                PlyModeArg::Ascii => PlyMode::Ascii,
                PlyModeArg::Binary => PlyMode::Binary,
            }),
            interpolation: self.interpolation.map(|i| match i {
                InterpolationArg::Bilinear => Interpolation::Bilinear,
                InterpolationArg::Nearest => Interpolation::Nearest,
            }),
            zbuffer: self.zbuffer.map(|s| matches!(s, Switch::On)),
        };
        PipelineConfig::load(&self.config, &overrides)
    }
}

impl SynthFlags {
    fn to_args(&self) -> SynthArgs {
        let defaults = SceneSpec::default();
        SynthArgs {
            out: self.out.clone(),
            spec: SceneSpec {
                seed: self.seed,
                n_frames: self.frames,
                n_points: self.points,
                n_sparse: self.sparse,
                baseline: self.baseline,
                model_scale: self.model_scale,
                noise_px: self.noise,
                calibration_views: self.views,
                thermal_field: match self.field {
                    FieldArg::Linear => defaults.thermal_field,
                    FieldArg::HotSpot => SceneSpec::hot_spot(),
                },
                ..defaults
            },
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Calibrate(args) => cmd_calibrate(&args.load()?),
        Command::Fuse(args) => cmd_fuse(&args.load()?),
        Command::Synth(flags) => cmd_synth(&flags.to_args()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            if cli.quiet {
                print!("{}", outcome.manifest);
            } else {
                for line in &outcome.summary {
                    println!("{line}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

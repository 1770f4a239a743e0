mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use config::PipelineConfig;

/// Exit status for bad input (arguments, config, files that fail validation).
pub const EXIT_VALIDATION: u8 = 2;
/// Exit status for failures while running a stage.
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] toonrig::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.kind(),
            CliError::Runtime(_) => "runtime",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_VALIDATION,
            CliError::Core(e) if e.is_validation() => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": {
                "kind": self.kind(),
                "message": self.to_string(),
                "exit_code": self.exit_code(),
            }
        })
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "toonrig",
    version,
    about = "Build, fit and animate layered 2D face rigs"
)]
pub struct Cli {
    /// JSON pipeline config; flags and TOONRIG_* variables override it.
    #[arg(long, global = true, env = "TOONRIG_CONFIG")]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel stages (results do not depend on it).
    #[arg(long, global = true, env = "TOONRIG_WORKERS")]
    pub workers: Option<usize>,
    /// Canvas size in pixels.
    #[arg(long, global = true, env = "TOONRIG_SIZE")]
    pub size: Option<u32>,
    /// RNG seed; required by `synth` and `train`.
    #[arg(long, global = true, env = "TOONRIG_SEED")]
    pub seed: Option<u64>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rig file management.
    #[command(subcommand)]
    Rig(RigCommand),
    /// Render a synthetic portrait with exact landmarks from a rig.
    Fixture(FixtureArgs),
    /// Generate a landmark/parameter dataset.
    Synth(SynthArgs),
    /// Train the landmark-to-parameter regressor.
    Train(TrainArgs),
    /// Build a character package from a portrait.
    Fit(FitArgs),
    /// Render an expression timeline to numbered PNG frames.
    Animate(AnimateArgs),
    /// Render a package still.
    Render(RenderArgs),
    /// Check a package's hashes and invariants.
    Verify(VerifyArgs),
}

#[derive(Debug, Subcommand)]
pub enum RigCommand {
    /// Write the built-in template rig and its atlas.
    Init(RigInitArgs),
}

#[derive(Debug, Args)]
pub struct RigInitArgs {
    /// Output directory (receives rig.json and atlas.png).
    #[arg(long, env = "TOONRIG_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long, env = "TOONRIG_RIG")]
    pub rig: Option<PathBuf>,
    #[arg(long, env = "TOONRIG_ATLAS")]
    pub atlas: Option<PathBuf>,
    /// Weights to render at; otherwise sampled from --seed, or neutral.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Output directory (portrait.png, landmarks.json, params.json).
    #[arg(long, env = "TOONRIG_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, env = "TOONRIG_RIG")]
    pub rig: Option<PathBuf>,
    /// Number of samples to draw.
    #[arg(long, env = "TOONRIG_SAMPLES")]
    pub samples: Option<usize>,
    /// Dataset file to write (a `.json` sidecar is written next to it).
    #[arg(long, env = "TOONRIG_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = "TOONRIG_DATASET")]
    pub dataset: Option<PathBuf>,
    /// Model file to write.
    #[arg(long, env = "TOONRIG_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "TOONRIG_EPOCHS")]
    pub epochs: Option<usize>,
    #[arg(long, env = "TOONRIG_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    #[arg(long, env = "TOONRIG_LEARNING_RATE")]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderArg {
    /// Portrait landmarks carried into the rig canvas.
    Warped,
    /// Warped landmarks redrawn as markers and detected.
    Markers,
    /// Landmarks read from --base-landmarks.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HairSlotArg {
    Front,
    Behind,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input portrait (PNG).
    #[arg(long)]
    pub portrait: PathBuf,
    /// Portrait landmarks (JSON, portrait pixel coordinates).
    #[arg(long)]
    pub landmarks: PathBuf,
    #[arg(long, env = "TOONRIG_RIG")]
    pub rig: Option<PathBuf>,
    #[arg(long, env = "TOONRIG_MODEL")]
    pub model: Option<PathBuf>,
    /// Package directory to write.
    #[arg(long, env = "TOONRIG_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ProviderArg::Warped)]
    pub provider: ProviderArg,
    /// Base-render landmarks in rig canvas pixels (with `--provider external`).
    #[arg(long)]
    pub base_landmarks: Option<PathBuf>,
    /// Hair image in portrait coordinates.
    #[arg(long, requires = "hair_mask")]
    pub hair: Option<PathBuf>,
    /// Hair coverage mask in portrait coordinates.
    #[arg(long, requires = "hair")]
    pub hair_mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = HairSlotArg::Front)]
    pub hair_slot: HairSlotArg,
    /// Feature mask dilation radius in pixels.
    #[arg(long)]
    pub dilation: Option<u32>,
    /// Atlas alpha above which a texel counts as feature coverage.
    #[arg(long)]
    pub alpha_threshold: Option<u8>,
}

#[derive(Debug, Args)]
pub struct AnimateArgs {
    #[arg(long)]
    pub package: PathBuf,
    /// JSON array of {time, channels}.
    #[arg(long)]
    pub timeline: PathBuf,
    /// Rule file; the bundled default mapping when omitted.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Directory receiving frame_00000.png, ...
    #[arg(long, env = "TOONRIG_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub package: PathBuf,
    /// Weights to render at instead of the fitted ones.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// PNG to write.
    #[arg(long, env = "TOONRIG_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub package: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    file.check()?;
    let workers = cli.workers.or(file.workers);
    if let Some(w) = workers {
        config::check_workers(w)?;
    }
    if let Some(s) = cli.size {
        config::check_size(s)?;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    log::debug!("running with {} worker(s)", pool.current_num_threads());
    pool.install(|| commands::dispatch(&cli, &file))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.render().to_string().trim_end().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}

//! The `motionctl` command line. [`run`] parses arguments, executes one
//! subcommand and writes a single-line JSON summary.

mod commands;
mod preload;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

pub const SEED_ENV: &str = "MOTIONCTL_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub message: String,
    /// Help or version output; printed to stdout with status 0.
    pub informational: bool,
}

impl CliError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            informational: false,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<motionctl_core::Error> for CliError {
    fn from(e: motionctl_core::Error) -> Self {
        CliError::new(e.to_string().replace('\n', " "))
    }
}

#[derive(Parser, Debug)]
#[command(name = "motionctl", version, about = "Trajectory-conditioned motion control workflows")]
struct Cli {
    /// TOML file preloading flags, one table per subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a scene into frames, flow and visibility.
    Synth(SynthArgs),
    /// Build condition tensors from flow or from strokes and a brush.
    Condition(ConditionArgs),
    /// Warp a reference image by densified condition trajectories.
    Preview(PreviewArgs),
    /// Train the toy conditioned denoiser.
    TrainToy(TrainArgs),
    /// Score a clip against reference trajectories.
    Eval(EvalArgs),
    /// Trajectories from depth, intrinsics and camera poses.
    Camera(CameraArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Scene description JSON.
    #[arg(long, conflicts_with = "random")]
    pub scene: Option<PathBuf>,
    /// Generate random scenes instead of reading one.
    #[arg(long)]
    pub random: bool,
    /// Number of random scenes; more than one writes `clip_NNNN` subdirectories.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 2)]
    pub max_blobs: usize,
    #[arg(long, default_value_t = 1.5)]
    pub max_speed: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Train,
    Infer,
}

/// How the drawn ratio `r_m` is read.
#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
pub enum Semantics {
    /// `r_m` is the fraction of regions dropped.
    MaskOut,
    /// `r_m` is the fraction of regions kept.
    Keep,
}

#[derive(Args, Debug)]
pub struct ConditionArgs {
    #[arg(long, value_enum, default_value_t = Mode::Train)]
    pub mode: Mode,
    /// Directory of `flow_NNNN.flo` (train mode).
    #[arg(long)]
    pub flow: Option<PathBuf>,
    /// Directory of `vis_NNNN.pgm`; defaults to the flow directory.
    #[arg(long)]
    pub vis: Option<PathBuf>,
    /// Trajectory JSON (infer mode).
    #[arg(long)]
    pub traj: Option<PathBuf>,
    /// Brush mask: PGM, PNG or run-length JSON (infer mode).
    #[arg(long)]
    pub brush: Option<PathBuf>,
    /// Clip length in infer mode; defaults to the trajectory file's `L`.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 0.95)]
    pub r_min: f64,
    #[arg(long, value_enum, default_value_t = Semantics::MaskOut)]
    pub semantics: Semantics,
    #[arg(long, default_value_t = 1.0)]
    pub threshold: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PreviewArgs {
    /// Reference frame PNG.
    #[arg(long)]
    pub image: PathBuf,
    /// Directory written by `condition`.
    #[arg(long)]
    pub cond: PathBuf,
    /// Also write the dense flow as `flow_NNNN.flo`.
    #[arg(long)]
    pub write_flow: bool,
    /// Inverse-distance weighting exponent.
    #[arg(long, default_value_t = 2.0)]
    pub power: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// A clip directory, or a directory of clip subdirectories.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Training configuration TOML.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Requested adapter rank, capped at what the toy model admits.
    #[arg(long)]
    pub lora_rank: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 0.95)]
    pub r_min: f64,
    #[arg(long, value_enum, default_value_t = Semantics::MaskOut)]
    pub semantics: Semantics,
    #[arg(long, default_value_t = 1.0)]
    pub threshold: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Train the cond-zeroed baseline.
    #[arg(long)]
    pub zero_condition: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
pub enum TrackerKind {
    Oracle,
    Blockmatch,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
pub enum EmbedderKind {
    Histogram,
    File,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of `frame_NNNN.png`.
    #[arg(long)]
    pub clip: PathBuf,
    /// Reference trajectory JSON.
    #[arg(long)]
    pub traj: PathBuf,
    #[arg(long, value_enum, default_value_t = TrackerKind::Oracle)]
    pub tracker: TrackerKind,
    /// Directory of `flow_NNNN.flo` for the oracle; defaults to the clip directory.
    #[arg(long)]
    pub flow: Option<PathBuf>,
    /// Scene JSON; the oracle then tracks analytically.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EmbedderKind::Histogram)]
    pub embedder: EmbedderKind,
    /// Per-frame embeddings JSON for `--embedder file`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Write the metrics report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CameraArgs {
    /// Depth map: 16-bit PGM or PFM.
    #[arg(long)]
    pub depth: PathBuf,
    /// Meters per PGM sample.
    #[arg(long, default_value_t = 0.001)]
    pub depth_scale: f64,
    /// Intrinsics JSON `{"fx","fy","cx","cy"}`.
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Pose sequence JSON.
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub stride: usize,
    /// Trajectory JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the all-ones brush mask PGM.
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Idle session lifetime in seconds.
    #[arg(long, default_value_t = 1800)]
    pub ttl_secs: u64,
    /// Allowed CORS origin; any when omitted.
    #[arg(long)]
    pub cors_origin: Option<String>,
}

fn parse(args: Vec<OsString>) -> Result<Command, CliError> {
    let args = preload::expand(args)?;
    let cmd = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let matches = cmd.try_get_matches_from(args).map_err(|e| {
        use clap::error::ErrorKind;
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => CliError {
                message: e.render().to_string(),
                informational: true,
            },
            _ => {
                let text = e.render().to_string();
                let line = text.lines().next().unwrap_or("invalid arguments");
                CliError::new(line.trim_start_matches("error: ").to_string())
            }
        }
    })?;
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::new(e.to_string()))?;
    Ok(cli.command)
}

/// Run one command line; the summary goes to `out` as one JSON line.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let command = parse(args.into_iter().map(Into::into).collect())?;
    let summary = match command {
        Command::Synth(a) => commands::synth(&a)?,
        Command::Condition(a) => commands::condition(&a)?,
        Command::Preview(a) => commands::preview(&a)?,
        Command::TrainToy(a) => commands::train_toy(&a)?,
        Command::Eval(a) => commands::eval(&a)?,
        Command::Camera(a) => commands::camera(&a)?,
        Command::Serve(a) => return commands::serve(&a, out),
    };
    write_summary(out, &summary)
}

pub(crate) fn write_summary(out: &mut dyn Write, summary: &serde_json::Value) -> Result<(), CliError> {
    let line = serde_json::to_string(summary).expect("summary serializes");
    writeln!(out, "{line}")
        .and_then(|_| out.flush())
        .map_err(|e| CliError::new(format!("stdout: {e}")))
}

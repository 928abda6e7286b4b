mod commands;
mod config;
mod error;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "blinkpipe", version, about = "Blink-intent gaze pipeline", args_override_self = true)]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Log filter (error, warn, info, debug, trace); overrides BLINKPIPE_LOG.
    #[arg(long, global = true)]
    log_level: Option<String>,

    /// File of `key = value` lines used as default flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic recordings with ground-truth ledgers.
    Simulate(SimulateArgs),
    /// Train a classifier on a directory of recordings.
    Train(TrainArgs),
    /// Score a checkpoint on held-out recordings.
    Eval(EvalArgs),
    /// Serve predictions over TCP.
    Serve(ServeArgs),
    /// Stream a recording to a server, or through an in-process session.
    Replay(ReplayArgs),
    /// Run the interaction state machine over a recording.
    FsmTrace(FsmTraceArgs),
    /// Derive per-eye closure thresholds from a guided recording.
    Calibrate(CalibrateArgs),
    /// Blink and label counts for a directory of recordings.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "sim-out")]
    out: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    minutes: f64,
    #[arg(long, default_value_t = 1)]
    participants: usize,
    #[arg(long)]
    spontaneous_rate: Option<f64>,
    #[arg(long)]
    voluntary_rate: Option<f64>,
    #[arg(long)]
    wink_rate: Option<f64>,
    /// Make voluntary blinks resemble spontaneous ones.
    #[arg(long)]
    hard: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of recordings; split 80/10/10 by participant.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "train-out")]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    epochs: u32,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// History length in samples.
    #[arg(long, default_value_t = blinkpipe::window::WINDOW_LEN)]
    window: usize,
    #[arg(long)]
    no_augment: bool,
    /// Write `epoch-NNNN.ckpt` every this many epochs (0 disables).
    #[arg(long, default_value_t = 1)]
    save_every: u32,
    /// Calibration profile JSON from `calibrate`.
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of test recordings.
    #[arg(long)]
    test: PathBuf,
    /// `split.json` from `train`; restricts evaluation to its test participants.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    baseline_trials: usize,
    /// Also print a plain-text results table to stderr.
    #[arg(long)]
    table: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = SocketAddr::from(([127, 0, 0, 1], blinkpipe::proto::DEFAULT_PORT)))]
    listen: SocketAddr,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "voluntary", value_parser = ["voluntary", "suppress"])]
    warmup_policy: String,
    #[arg(long, default_value_t = 8192)]
    queue: usize,
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Recording CSV to stream.
    #[arg(long = "in")]
    input: PathBuf,
    /// Server address; without it the recording runs through a local session.
    #[arg(long, conflicts_with = "checkpoint")]
    connect: Option<SocketAddr>,
    /// Checkpoint for the local session.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Playback speed relative to real time; 0 sends as fast as possible.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    #[arg(long, default_value = "voluntary", value_parser = ["voluntary", "suppress"])]
    warmup_policy: String,
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FsmTraceArgs {
    /// Recording CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Head poses: `timestamp_ns,yaw_deg,pitch_deg` per line. Defaults to a
    /// head fixed straight ahead.
    #[arg(long)]
    head: Option<PathBuf>,
    #[arg(long, default_value_t = blinkpipe::fsm::DEFAULT_PLANE_DISTANCE_M)]
    distance: f64,
    #[arg(long, default_value_t = 0.5)]
    dead_zone_deg: f64,
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Guided recording CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Closure intervals; defaults to `<participant>.ledger.csv` next to the recording.
    #[arg(long)]
    ledger: Option<PathBuf>,
    #[arg(long, default_value_t = blinkpipe::CalibrationProfile::DEFAULT_BAND)]
    band: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    profile: Option<PathBuf>,
}

fn init_logging(level: Option<&str>) {
    let env = env_logger::Env::new().filter_or("BLINKPIPE_LOG", "warn");
    let mut b = env_logger::Builder::from_env(env);
    if let Some(l) = level {
        b.parse_filters(l);
    }
    let _ = b.try_init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a, seed),
        Command::Train(a) => commands::train(&a, seed),
        Command::Eval(a) => commands::eval(&a, seed),
        Command::Serve(a) => commands::serve(&a),
        Command::Replay(a) => commands::replay(&a),
        Command::FsmTrace(a) => commands::fsm_trace(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Stats(a) => commands::stats(&a),
    }
}

fn main() -> ExitCode {
    let argv = match config::expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    init_logging(cli.log_level.as_deref());
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! `specktrack` command-line entry point.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::defaults_help;
use crate::output::CliError;

#[derive(Parser, Debug)]
#[command(name = "specktrack", version, about = "Speckle tracking, motion analytics and training workflows")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Overrides the `seed` of the subcommand config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Directory receiving every output and the run manifest.
    #[arg(long, global = true, default_value = "specktrack_out")]
    pub output_dir: PathBuf,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    pub plot: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic speckle dataset with analytic trajectories.
    #[command(after_help = defaults_help("synth"))]
    Synth(commands::SynthArgs),
    /// Write affine and photometric augmentations of a dataset.
    #[command(after_help = defaults_help("augment"))]
    Augment(commands::AugmentArgs),
    /// Per-phase direction statistics and the optimal query phase.
    #[command(after_help = defaults_help("motion"))]
    Motion(commands::MotionArgs),
    /// Train the encoder on a dataset.
    #[command(after_help = defaults_help("train"))]
    Train(commands::TrainArgs),
    /// Track query points through one video.
    #[command(after_help = defaults_help("track"))]
    Track(commands::TrackArgs),
    /// Accuracy and median trajectory error on a dataset.
    #[command(after_help = defaults_help("eval"))]
    Eval(commands::EvalArgs),
    /// Metrics as a function of the query phase.
    #[command(after_help = defaults_help("sweep"))]
    Sweep(commands::SweepArgs),
    /// Global longitudinal strain of reference and tracked contours.
    #[command(after_help = defaults_help("gls"))]
    Gls(commands::GlsArgs),
    /// Compare analytic and finite-difference gradients.
    #[command(after_help = defaults_help("gradcheck"))]
    Gradcheck(commands::GradcheckArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let g = &cli.global;
    match cli.command {
        Command::Synth(a) => commands::synth(g, a),
        Command::Augment(a) => commands::augment(g, a),
        Command::Motion(a) => commands::motion(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::Track(a) => commands::track(g, a),
        Command::Eval(a) => commands::eval(g, a),
        Command::Sweep(a) => commands::sweep(g, a),
        Command::Gls(a) => commands::gls(g, a),
        Command::Gradcheck(a) => commands::gradcheck(g, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

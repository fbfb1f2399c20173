/// `println!` that ignores a closed stdout (e.g. output piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

mod commands;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "snnrt",
    version,
    about = "Spiking neural network runtime: inference, profiling and pruning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run inference on one recording or every file in a directory.
    Run(RunArgs),
    /// Record per-neuron spike counts over a dataset directory.
    Profile(ProfileArgs),
    /// Remove channels and neurons that stayed silent during profiling.
    Prune(PruneArgs),
    /// Time repeated inference on one recording.
    Bench(BenchArgs),
    /// Bin an event recording into frames and write the frame dump.
    Convert(ConvertArgs),
    /// Check a model file and print its shape trace.
    Validate(ValidateArgs),
    /// Write one of the built-in fixture models, optionally with recordings.
    Fixture(FixtureArgs),
}

#[derive(Args, Clone)]
struct FrameArgs {
    /// Frames per sample [default: the model's num_steps].
    #[arg(long)]
    frames: Option<usize>,
    /// Clamp binned frames to {0, 1}.
    #[arg(long)]
    binarize: bool,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct InputArgs {
    /// Event file: N-MNIST `.bin`, `t,x,y,p` `.csv`, or a `.json` frame dump.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Directory of event files, processed in name order.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    frames: FrameArgs,
    /// Also write every spike as `step,layer_index,neuron_index` (single recording only).
    #[arg(long)]
    dump_raster: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    frames: FrameArgs,
    /// Worker threads; the merged profile does not depend on this.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    profile: PathBuf,
    /// Remove groups whose activity is at most this many spikes.
    #[arg(long, default_value_t = 0)]
    threshold: u64,
    /// Pruned model output.
    #[arg(long, short)]
    out: PathBuf,
    /// Where to write the plan [default: next to --out, with `.plan.json`].
    #[arg(long)]
    plan_out: Option<PathBuf>,
    /// How a channel's per-neuron counts combine into one activity value.
    #[arg(long, value_enum, default_value_t = Aggregate::Sum)]
    aggregate: Aggregate,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    events: PathBuf,
    #[command(flatten)]
    frames: FrameArgs,
    #[arg(long, default_value_t = snnrt_core::bench::DEFAULT_RUNS)]
    runs: usize,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Free-form tag stored in the report.
    #[arg(long, default_value = "")]
    label: String,
    /// A previous JSON report to compare against.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Also time each layer (separate pass).
    #[arg(long)]
    per_layer: bool,
    /// Record the process's peak resident set size (Linux only).
    #[arg(long)]
    peak_rss: bool,
    /// Write the report here instead of standard output.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    /// N-MNIST `.bin` or `t,x,y,p` `.csv` recording.
    events: PathBuf,
    #[arg(long, default_value_t = snnrt_core::fixtures::DEFAULT_FRAMES)]
    frames: usize,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    binarize: bool,
    /// Merge both polarities into one channel.
    #[arg(long)]
    collapse_polarity: bool,
    /// Sensor size for CSV input, `HxW`.
    #[arg(long, default_value = "34x34", value_parser = inputs::parse_sensor)]
    sensor: (usize, usize),
    /// Fixed bin width instead of splitting the recording evenly.
    #[arg(long)]
    bin_width_us: Option<u64>,
}

#[derive(Args)]
struct ValidateArgs {
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(value_enum)]
    kind: FixtureKind,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write synthetic recordings into this directory.
    #[arg(long)]
    events_dir: Option<PathBuf>,
    /// Number of recordings for --events-dir.
    #[arg(long, default_value_t = 3)]
    samples: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Aggregate {
    Sum,
    Max,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureKind {
    /// Two-block conv network over 2x34x34 event frames.
    Nmnist,
    /// The same network with half of the first conv layer's filters dead.
    NmnistSilent,
    /// 100-128-10 dense network over a 1x10x10 grid.
    Stmnist,
    /// Four-filter conv toy with two silent filters.
    Toy,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Profile(a) => commands::profile(a),
        Command::Prune(a) => commands::prune(a),
        Command::Bench(a) => commands::bench(a),
        Command::Convert(a) => commands::convert(a),
        Command::Validate(a) => commands::validate(a),
        Command::Fixture(a) => commands::fixture(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code())
        }
    }
}

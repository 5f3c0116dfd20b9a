use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand};

mod cache;
mod commands;
mod config;
mod error;
mod output;

use config::Settings;
use error::CliResult;

#[derive(Parser, Debug)]
#[command(name = "survgroup", version, about = "Find subgroups with exceptional survival")]
struct Cli {
    /// More log output (-v info, -vv debug with training progress)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the population model and learn subgroup rules
    Discover(DiscoverArgs),
    /// Simplify rules from a previous discover run
    Prune(PruneArgs),
    /// Permutation test for rules from a previous discover run
    Validate(ValidateArgs),
    /// Generate a dataset with a planted subgroup
    Synth(SynthCmdArgs),
    /// Measure recovery of planted subgroups over a parameter sweep
    Bench(BenchArgs),
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// CSV file with a header row
    #[arg(long)]
    input: Option<PathBuf>,
    /// Column holding follow-up times
    #[arg(long)]
    time_col: Option<String>,
    /// Column holding event indicators (1 event, 0 censored)
    #[arg(long)]
    event_col: Option<String>,
    /// Expand non-numeric columns into indicator columns
    #[arg(long)]
    one_hot: bool,
}

impl DataArgs {
    fn apply(&self, s: &mut Settings) {
        s.set_opt("input", self.input.as_ref().map(|p| p.display()));
        s.set_opt("time-col", self.time_col.as_ref());
        s.set_opt("event-col", self.event_col.as_ref());
        s.set_flag("one-hot", self.one_hot);
    }
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// Flat `key = value` file; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Size penalty exponent in [0, 1]
    #[arg(long)]
    gamma: Option<f64>,
    /// Initial temperature of the soft conditions
    #[arg(long)]
    tau: Option<f64>,
    /// Optimisation steps per subgroup
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Number of subgroups to learn
    #[arg(long)]
    subgroups: Option<usize>,
    /// Trees in the survival forest
    #[arg(long)]
    trees: Option<usize>,
    /// Maximum tree depth, or `auto`
    #[arg(long)]
    max_depth: Option<String>,
    /// Smallest node the forest will split
    #[arg(long)]
    min_split: Option<usize>,
    /// Smallest leaf the forest will create
    #[arg(long)]
    min_leaf: Option<usize>,
    /// Bootstrap size cap per tree
    #[arg(long)]
    max_per_tree: Option<usize>,
    /// Base seed for every random component
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

impl ModelArgs {
    fn settings(&self) -> CliResult<Settings> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        s.set_opt("gamma", self.gamma);
        s.set_opt("tau", self.tau);
        s.set_opt("epochs", self.epochs);
        s.set_opt("lr", self.lr);
        s.set_opt("subgroups", self.subgroups);
        s.set_opt("trees", self.trees);
        s.set_opt("max-depth", self.max_depth.as_ref());
        s.set_opt("min-split", self.min_split);
        s.set_opt("min-leaf", self.min_leaf);
        s.set_opt("max-per-tree", self.max_per_tree);
        s.set_opt("seed", self.seed);
        s.set_opt("threads", self.threads);
        Ok(s)
    }
}

#[derive(Args, Debug)]
struct DiscoverArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Attach permutation p-values to every subgroup
    #[arg(long)]
    validate: bool,
    /// Permutations for the null model
    #[arg(long)]
    null_runs: Option<usize>,
    /// Smaller forests in permutation runs
    #[arg(long)]
    fast_null: bool,
    /// Simplify learned rules before reporting
    #[arg(long)]
    prune: bool,
    /// Jaccard similarity a pruned rule must keep
    #[arg(long)]
    prune_threshold: Option<f64>,
    /// Directory for result files (default: current directory)
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PruneArgs {
    /// `subgroups.json` from a discover run
    #[arg(long)]
    rules: PathBuf,
    /// Overrides the data location recorded with the rules
    #[command(flatten)]
    data: DataArgs,
    /// Jaccard similarity a pruned rule must keep
    #[arg(long, alias = "prune-threshold")]
    threshold: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// `subgroups.json` from a discover run
    #[arg(long)]
    rules: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = config::DEFAULT_NULL_RUNS)]
    null_runs: usize,
    #[arg(long)]
    fast_null: bool,
    /// Family-wise significance level
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Default, Clone)]
struct SynthArgs {
    /// Subjects
    #[arg(long)]
    n: Option<usize>,
    /// Features
    #[arg(long)]
    p: Option<usize>,
    /// Conditions in the planted rule
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    scale_nsg: Option<f64>,
    #[arg(long)]
    shape_nsg: Option<f64>,
    #[arg(long)]
    scale_sg: Option<f64>,
    #[arg(long)]
    shape_sg: Option<f64>,
    /// Expected fraction of subjects in the subgroup
    #[arg(long)]
    ratio_target: Option<f64>,
    /// Fraction of censored subjects
    #[arg(long)]
    ratio_cens: Option<f64>,
}

#[derive(Args, Debug)]
struct SynthCmdArgs {
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for data.csv and truth.json
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// features, censoring, subgroup-fraction, samples or hazard-ratio
    #[arg(long)]
    sweep: String,
    /// Comma-separated sweep values
    #[arg(long, value_delimiter = ',', required = true)]
    points: Vec<f64>,
    /// Generated datasets per point
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[command(flatten)]
    synth: SynthArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Directory for the TSV tables (default: current directory)
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Discover(args) => commands::discover(args, cli.verbose),
        Command::Prune(args) => commands::prune(args),
        Command::Validate(args) => commands::validate(args),
        Command::Synth(args) => commands::synth(args),
        Command::Bench(args) => commands::bench(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

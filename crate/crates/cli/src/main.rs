//! `fundus`: synthetic data, training, evaluation, ensembling and reports.

mod commands;
mod common;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use common::CliError;

#[derive(Parser, Debug)]
#[command(name = "fundus", version, about = "Small-data fundus classifier experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic two-eyed fundus dataset with a planted signal.
    Synth(SynthArgs),
    /// Train one model from a config file into runs/<name>/.
    Train(TrainArgs),
    /// Score a trained run on its val and/or test partition with bootstrap CIs.
    Eval(EvalArgs),
    /// Score a trained run on every image of another dataset.
    Crosstest(CrosstestArgs),
    /// Average the best ell of L trained runs.
    Ensemble(EnsembleArgs),
    /// Reshuffled-ensemble size sweep and validation-to-test regression study.
    Reshuffle(ReshuffleArgs),
    /// Training-curve and validation-vs-test SVG plots.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    patients: usize,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Vessel texture: a (default) or b (shifted domain).
    #[arg(long, default_value = "a")]
    style: String,
    /// Prefix for patient ids.
    #[arg(long, default_value = "")]
    prefix: String,
    /// Patient-level train,val,test fractions, or `none` to leave images unassigned.
    #[arg(long, default_value = "0.75,0.125,0.125")]
    split: String,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set train.max_epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct BootstrapArgs {
    /// Bootstrap replicates (defaults to the run config).
    #[arg(long = "b")]
    b: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    /// Defaults to `<run>/best.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Defaults to the manifest in the run config.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// train, val, test or all (val and test).
    #[arg(long, default_value = "all")]
    partition: String,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
}

#[derive(Args, Debug)]
struct CrosstestArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// External dataset; its partition column is ignored.
    #[arg(long)]
    manifest: PathBuf,
    /// Suffix for the output files.
    #[arg(long, default_value = "external")]
    tag: String,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    /// Trained run directories (exactly L of them).
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    ell: usize,
    #[arg(long = "L")]
    big_l: usize,
    /// Defaults to the manifest of the first run.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    partition: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
}

#[derive(Args, Debug)]
struct ReshuffleArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run directories to plot.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    /// Where the validation-vs-test scatter goes (defaults to the first run's plots/).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Crosstest(a) => commands::crosstest(a),
        Command::Ensemble(a) => commands::ensemble(a),
        Command::Reshuffle(a) => commands::reshuffle(a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}

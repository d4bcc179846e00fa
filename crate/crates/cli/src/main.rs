//! `noisec`: train, attack, detect and evaluate from a TOML configuration.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use noisec::pipeline::DetectorKind;

use commands::Context;
use config::ExperimentConfig;
use error::CliError;

#[derive(Parser)]
#[command(
    name = "noisec",
    version,
    about = "Noise-based detection of adversarial and backdoor inputs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the configured train and test splits as dataset files.
    GenData(Common),
    /// Trains the classifier, surrogate, autoencoder and detector bundles.
    Train(Common),
    /// Generates malicious samples for every configured attack.
    Attack(Common),
    /// Screens a dataset or attack batch file with a trained bundle.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Dataset (.nsds) or attack batch (.nsab) file.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "gmm", value_parser = parse_detector)]
        detector: DetectorKind,
        /// Defended model: `target` or `backdoored` (default chosen from the input).
        #[arg(long)]
        model: Option<String>,
    },
    /// Runs the full evaluation and writes JSON, CSV and ROC reports.
    Eval(Common),
    /// Renders the evaluation report as markdown tables.
    Report(Common),
}

fn parse_detector(s: &str) -> Result<DetectorKind, String> {
    DetectorKind::from_name(s).ok_or_else(|| format!("unknown detector {s:?} (knn, gmm, max, std)"))
}

fn context(common: &Common) -> Result<Context, CliError> {
    let config = ExperimentConfig::load(&common.config)?;
    Context::new(config, common.seed, common.out.clone())
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(c) => print_paths(&commands::gen_data(&context(&c)?)?),
        Command::Train(c) => print_paths(&commands::train(&context(&c)?)?),
        Command::Attack(c) => print_paths(&commands::attack(&context(&c)?)?),
        Command::Detect {
            common,
            input,
            detector,
            model,
        } => {
            let (path, flagged, total) =
                commands::detect(&context(&common)?, &input, detector, model.as_deref())?;
            println!("{flagged} of {total} inputs flagged as malicious");
            print_paths(&[path]);
        }
        Command::Eval(c) => {
            let (report, paths) = commands::eval(&context(&c)?)?;
            for r in &report.results {
                if let Some(d) = r.detector("gmm") {
                    println!(
                        "{} {}: gmm auroc {:.3}",
                        r.setting.name(),
                        r.attack,
                        d.auroc
                    );
                }
            }
            print_paths(&paths);
        }
        Command::Report(c) => print_paths(&[commands::report(&context(&c)?)?]),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Command-line benchmark runner.
//!
//! `bench run --config experiment.json` executes the experiment described
//! by the JSON config (field-for-field the library's experiment
//! configuration) and writes the report to the configured destination,
//! standard output by default.
//!
//! Exit codes: 0 on success, 1 on configuration or I/O errors, 2 when the
//! run finished but one or more cells failed.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use csi_core::bench::{self, ExperimentConfig, OutputFormat, Scenario};

#[derive(Parser)]
#[command(
    name = "bench",
    version,
    about = "Offline contextual-bandit benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Write the report here, overriding the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format, overriding the config's `format`.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Worker threads for cell execution; defaults to all cores.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Scenario, overriding the config's `scenario`.
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    /// Scale up from desk size: 100 environments, sizes 10K/100K/500K.
    #[arg(long)]
    large_scale: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Markdown,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Markdown => OutputFormat::Markdown,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Full,
    FeatureSubset,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Full => Scenario::Full,
            ScenarioArg::FeatureSubset => Scenario::FeatureSubset,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; bad usage is a
            // configuration error.
            let code = if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run(args) => match run(args) {
            Ok(code) => code,
            Err(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(1)
            }
        },
    }
}

fn run(args: RunArgs) -> Result<ExitCode, String> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| format!("cannot read config {}: {e}", args.config.display()))?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| format!("invalid config: {e}"))?;
    if let Some(format) = args.format {
        cfg.format = format.into();
    }
    if let Some(scenario) = args.scenario {
        cfg.scenario = scenario.into();
    }
    if args.large_scale {
        cfg.apply_large_scale();
    }
    if let Some(out) = args.out {
        cfg.output = Some(out);
    }
    cfg.validate().map_err(|e| e.to_string())?;
    if let Some(threads) = args.parallelism {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| format!("cannot configure worker pool: {e}"))?;
    }

    let result = bench::run(&cfg).map_err(|e| e.to_string())?;
    let report = result.render(cfg.format);
    match &cfg.output {
        Some(path) => {
            fs::write(path, report).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            eprintln!(
                "wrote {} rows ({} failures) to {}",
                result.rows.len(),
                result.failures.len(),
                path.display()
            );
        }
        None => print!("{report}"),
    }
    for f in &result.failures {
        eprintln!(
            "cell failure: env_seed {}, n={}: {}",
            f.env_seed, f.n_samples, f.message
        );
    }
    if result.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

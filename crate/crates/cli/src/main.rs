use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eventcast_core::dataset::SyntheticSpec;
use eventcast_core::evaluation::SweepAxis;
use eventcast_core::harness::{self, HarnessError, RunSpec};
use tracing_subscriber::EnvFilter;

/// Temporal event forecasting benchmark harness.
#[derive(Parser)]
#[command(name = "eventcast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset statistics (split counts, complex events, entity and monthly frequencies).
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for the CSV tables.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Checks a dataset against the model invariants.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Writes a seeded synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// TOML file with generator settings.
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "default")]
        preset: Preset,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Samples the test-split question bank.
    MakeBank(SpecArgs),
    /// Runs one experiment.
    Run(SpecArgs),
    /// Runs one experiment per value of an axis.
    Sweep {
        #[command(flatten)]
        spec: SpecArgs,
        /// history_length, horizon, scope, retriever, strategy or format.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated values; the axis' default grid when omitted.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Writes fine-tuning records with rule-based history.
    ExportFinetune(SpecArgs),
    /// Summarizes a run directory.
    Report { run_dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Small,
    CopyHead,
}

#[derive(Args)]
struct SpecArgs {
    /// Run spec (TOML).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Override a spec key, e.g. --set experiment.horizon=7.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn quoted_path(p: &Path) -> String {
    let p = std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    toml::Value::String(p.display().to_string()).to_string()
}

impl SpecArgs {
    fn load(&self, extra: &[String]) -> Result<RunSpec, HarnessError> {
        let mut overrides = self.set.clone();
        overrides.extend_from_slice(extra);
        if let Some(n) = self.max_in_flight {
            overrides.push(format!("gateway.max_in_flight={n}"));
        }
        if let Some(dir) = &self.output_dir {
            overrides.push(format!("output_dir={}", quoted_path(dir)));
        }
        RunSpec::load(self.spec.as_deref(), &overrides)
    }
}

fn synth_spec(spec: Option<&Path>, preset: Preset, seed: Option<u64>) -> Result<SyntheticSpec, HarnessError> {
    let mut s = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| HarnessError::Input(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| HarnessError::Input(format!("{}: {e}", p.display())))?
        }
        None => match preset {
            Preset::Default => SyntheticSpec::default(),
            Preset::Small => SyntheticSpec::small(1),
            Preset::CopyHead => SyntheticSpec::copy_head(1),
        },
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Stats { manifest, out } => {
            print!("{}", harness::cmd_stats(&manifest, out.as_deref())?);
        }
        Command::Validate { manifest } => println!("{}", harness::cmd_validate(&manifest)?),
        Command::Synth {
            out,
            spec,
            preset,
            seed,
        } => {
            let s = synth_spec(spec.as_deref(), preset, seed)?;
            let manifest = harness::cmd_synth(&s, &out)?;
            println!("{}", manifest.display());
        }
        Command::MakeBank(args) => {
            let (path, n) = harness::cmd_make_bank(&args.load(&[])?)?;
            println!("{n} questions written to {}", path.display());
        }
        Command::Run(args) => {
            let spec = args.load(&[])?;
            let out = harness::cmd_run(&spec)?;
            let s = &out.summary.summary;
            println!(
                "accuracy {:.4}  invalid rate {:.4}  n {}  -> {}",
                s.accuracy,
                s.invalid_rate,
                s.n,
                spec.output_dir.display()
            );
        }
        Command::Sweep { spec, axis, values } => {
            let mut extra = Vec::new();
            if let Some(a) = axis {
                a.parse::<SweepAxis>().map_err(HarnessError::Input)?;
                extra.push(format!("sweep.axis={}", toml::Value::String(a)));
            }
            if !values.is_empty() {
                let list: Vec<String> = values.into_iter().map(|v| toml::Value::String(v).to_string()).collect();
                extra.push(format!("sweep.values=[{}]", list.join(", ")));
            }
            let run = spec.load(&extra)?;
            let result = harness::cmd_sweep(&run)?;
            print!("{}", result.to_csv());
        }
        Command::ExportFinetune(args) => {
            let (path, n) = harness::cmd_export_finetune(&args.load(&[])?)?;
            println!("{n} records written to {}", path.display());
        }
        Command::Report { run_dir } => print!("{}", harness::cmd_report(&run_dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

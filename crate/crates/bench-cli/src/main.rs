use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stablqr_cli::config::{
    BenchMethod, ConfigFile, MontecarloPlan, NondetectablePlan, OutFormat, ScenarioPlan,
    SinglePlan,
};
use stablqr_cli::experiments;
use stablqr_cli::records::{
    csv_string, json_string, robustness_table, summary_table, TrialRecord,
};
use stablqr_cli::CliError;

/// Finite-horizon LQR benchmark runner: stabilized constant-feedback
/// solvers on Leslie population models, deterministic and scenario-robust.
#[derive(Parser)]
#[command(name = "stablqr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo study over randomly sampled Leslie plants.
    Montecarlo(RunArgs),
    /// Repeated random restarts on a fixed plant whose Riccati route fails.
    Nondetectable(RunArgs),
    /// Scenario-robust training with support-subsample robustness levels.
    Scenario(RunArgs),
    /// One explicit solve; prints a JSON report.
    Solve(SolveArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file; omitted fields use benchmark defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv | json
    #[arg(long)]
    format: Option<String>,
    /// Comma-separated subset of s0,s1,s2,sinf,classic.
    #[arg(long)]
    methods: Option<String>,
    /// Write the time_ms column as zero for byte-identical reruns.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct SolveArgs {
    /// JSON configuration file with explicit system and cost matrices.
    #[arg(long)]
    config: PathBuf,
    /// Method to run: classic, s0, s1, s2 or sinf.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(path: &Option<PathBuf>) -> Result<ConfigFile, CliError> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::empty()),
    }
}

fn apply_overrides(cfg: &mut ConfigFile, args: &RunArgs) -> Result<(), CliError> {
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    if let Some(methods) = &args.methods {
        let parsed = BenchMethod::parse_list(methods)?;
        cfg.methods = Some(parsed.iter().map(|m| m.name().to_string()).collect());
    }
    Ok(())
}

struct OutputOptions {
    path: Option<PathBuf>,
    format: OutFormat,
    timing: bool,
}

impl OutputOptions {
    fn resolve(args: &RunArgs, cfg: &ConfigFile) -> Result<Self, CliError> {
        let out_section = cfg.output.as_ref();
        let path = args
            .out
            .clone()
            .or_else(|| out_section.and_then(|o| o.path.clone()).map(PathBuf::from));
        let format = match args
            .format
            .as_deref()
            .or_else(|| out_section.and_then(|o| o.format.as_deref()))
        {
            Some(s) => OutFormat::parse(s)?,
            None => OutFormat::Csv,
        };
        let timing = if args.no_timing {
            false
        } else {
            out_section.and_then(|o| o.timing).unwrap_or(true)
        };
        Ok(Self {
            path,
            format,
            timing,
        })
    }

    fn emit<R: serde::Serialize>(
        &self,
        records: &[TrialRecord],
        report: Option<&R>,
    ) -> Result<(), CliError> {
        let text = match self.format {
            OutFormat::Csv => csv_string(records, self.timing),
            OutFormat::Json => json_string(records, report, self.timing),
        };
        match &self.path {
            Some(path) => std::fs::write(path, text)?,
            None => std::io::stdout().write_all(text.as_bytes())?,
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Montecarlo(args) => {
            let mut cfg = load_config(&args.config)?;
            apply_overrides(&mut cfg, &args)?;
            let plan = MontecarloPlan::resolve(&cfg)?;
            let output = OutputOptions::resolve(&args, &cfg)?;
            let records = experiments::run_montecarlo(&plan)?;
            output.emit::<()>(&records, None)
        }
        Command::Nondetectable(args) => {
            let mut cfg = load_config(&args.config)?;
            apply_overrides(&mut cfg, &args)?;
            let plan = NondetectablePlan::resolve(&cfg)?;
            let output = OutputOptions::resolve(&args, &cfg)?;
            let (records, summary) = experiments::run_nondetectable(&plan)?;
            eprintln!("{}", summary_table(&summary));
            output.emit(&records, Some(&summary))
        }
        Command::Scenario(args) => {
            let mut cfg = load_config(&args.config)?;
            apply_overrides(&mut cfg, &args)?;
            let plan = ScenarioPlan::resolve(&cfg)?;
            let output = OutputOptions::resolve(&args, &cfg)?;
            let (records, report) = experiments::run_scenario(&plan)?;
            eprintln!("{}", robustness_table(&report));
            output.emit(&records, Some(&report))
        }
        Command::Solve(args) => {
            let mut cfg = ConfigFile::load(&args.config)?;
            if let Some(seed) = args.seed {
                cfg.seed = Some(seed);
            }
            let plan = SinglePlan::resolve(&cfg, args.method.as_deref())?;
            let report = experiments::run_single(&plan)?;
            let text = serde_json::to_string_pretty(&report).expect("serializable");
            match &args.out {
                Some(path) => std::fs::write(path, text)?,
                None => println!("{text}"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

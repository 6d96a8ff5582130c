use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dualcal::corpus::CorpusFormat;
use dualcal::harness::{self, ClientKind, Overrides, RunConfig};
use log::{error, info};

#[derive(Parser, Debug)]
#[command(name = "dualcal", version, about = "Diversity-calibrated newsletter experiments")]
struct Cli {
    /// TOML run configuration; the default simulation is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for per-reader work.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true, value_parser = parse_client)]
    llm_client: Option<ClientKind>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clean and label a raw article dump.
    Ingest {
        input: PathBuf,
        #[arg(long, default_value = "ndjson")]
        format: String,
    },
    /// Random search over the calibration weights on held-out days.
    Tune,
    /// Run the three-group experiment.
    Run,
    /// Summarize a run directory.
    Report { run_dir: PathBuf },
    /// Event-gating rate and fidelity across similarity thresholds.
    SweepThreshold,
}

fn parse_client(s: &str) -> Result<ClientKind, String> {
    s.parse().map_err(|e: dualcal::Error| e.to_string())
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::simulate(0),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        parallelism: cli.parallelism,
        llm_client: cli.llm_client,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Ingest { input, format } => {
            let format: CorpusFormat = format.parse()?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("ingested"));
            let outcome = harness::cmd_ingest(input, format, &out)?;
            println!(
                "{} articles accepted, {} quarantined; written to {}",
                outcome.report.accepted,
                outcome.report.quarantined.len(),
                out.display()
            );
        }
        Command::Tune => {
            let cfg = load_config(cli)?;
            let outcome = harness::cmd_tune(&cfg)?;
            let s = &outcome.report.selected;
            println!(
                "selected theta_t = {:.2}, theta_l = {:.2}; report in {}",
                s.theta_t,
                s.theta_l,
                outcome.dir.display()
            );
        }
        Command::Run => {
            let cfg = load_config(cli)?;
            let outcome = harness::cmd_run(&cfg)?;
            println!("{}", outcome.dir.display());
            if outcome.failures() > 0 {
                error!("{} reader-days failed", outcome.failures());
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report { run_dir } => {
            let settings = match &cli.config {
                Some(_) => load_config(cli)?.report,
                None => Default::default(),
            };
            let out = cli.out.clone().unwrap_or_else(|| run_dir.join("report"));
            let report = harness::cmd_report(run_dir, &out, &settings)?;
            println!("report written to {}", out.display());
            if !report.warnings.is_empty() {
                info!("report is partial: {} warnings", report.warnings.len());
            }
        }
        Command::SweepThreshold => {
            let cfg = load_config(cli)?;
            let outcome = harness::cmd_sweep(&cfg)?;
            for r in &outcome.rows {
                println!("theta_sim {:.2}: event rate {:.3} over {} pairs", r.theta_sim, r.event_rate, r.pairs);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}

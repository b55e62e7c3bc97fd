use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use resil_core::campaign::{self, CampaignConfig, RunOptions};
use resil_core::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_FATAL_RUN: u8 = 3;

/// Fault-injection campaigns on a simulated cluster.
#[derive(Parser)]
#[command(name = "resil", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed and arm of a campaign and write its reports.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output.dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed range `a..b` (exclusive) or `a..=b`; overrides `seeds`.
        #[arg(long)]
        seeds: Option<String>,
        /// Run only this arm.
        #[arg(long)]
        arm: Option<String>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => validate(&config),
        Command::Run { config, out, seeds, arm } => run(&config, out, seeds, arm),
    }
}

fn validate(path: &Path) -> ExitCode {
    match campaign::validate_config(path) {
        Ok(_) => {
            println!("ok");
            ExitCode::SUCCESS
        }
        Err(diags) => {
            for d in &diags {
                eprintln!("error: {d}");
            }
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn run(path: &Path, out: Option<PathBuf>, seeds: Option<String>, arm: Option<String>) -> ExitCode {
    let cfg = match CampaignConfig::load(path) {
        Ok(c) => c,
        Err(d) => {
            eprintln!("error: {d}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let seeds = match seeds.as_deref().map(campaign::parse_seed_range).transpose() {
        Ok(s) => s,
        Err(e) => return report(&e),
    };
    let result = match campaign::run_campaign(&cfg, &RunOptions { seeds, arm }) {
        Ok(r) => r,
        Err(e) => return report(&e),
    };
    let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    if let Err(e) = campaign::write_outputs(&result, &dir, now) {
        return report(&e);
    }
    print!("{}", campaign::summary_text(&result.summary));
    println!("\nwrote {}", dir.display());
    if result.any_fatal() {
        eprintln!("error: {} run(s) ended unrecoverable or persistently corrupted", result.summary.fatal_runs);
        return ExitCode::from(EXIT_FATAL_RUN);
    }
    ExitCode::SUCCESS
}

fn report(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) => ExitCode::from(EXIT_CONFIG),
        _ => ExitCode::from(EXIT_FAILURE),
    }
}

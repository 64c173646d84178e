//! `swarmcco` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or oracle failure, 2 usage/config error.

mod run;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use swarmcco::config::{Method, NoisePreset};

#[derive(Parser)]
#[command(name = "swarmcco", version, about = "Chance-constrained collision avoidance for simulated quadrotor swarms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded batch of antipodal-swap trials and write metric files.
    Run(RunArgs),
    /// Run the numerical oracle suites and report measured deviations.
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// JSON scenario file; flags below override its values.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long, value_parser = parse_noise)]
    pub noise: Option<NoisePreset>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; must not exist or be empty.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a per-step trace CSV.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    All,
    Chance,
    Em,
    Dynamics,
    Orca,
}

#[derive(Args, Debug, Clone)]
pub struct ValidateArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    pub suite: Suite,
    /// Monte-Carlo samples per probability estimate.
    #[arg(long, default_value_t = 1_000_000)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method `{s}` (deterministic, bv, gaussian, gmm2, gmm3)"))
}

fn parse_noise(s: &str) -> Result<NoisePreset, String> {
    NoisePreset::parse(s).ok_or_else(|| format!("unknown noise preset `{s}` (none, sigma1, sigma2)"))
}

/// Worker cap from `SWARMCCO_THREADS`; unset, empty or zero means no cap.
fn thread_cap() -> Result<Option<usize>, String> {
    match std::env::var("SWARMCCO_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(|n| (n > 0).then_some(n))
            .map_err(|_| format!("SWARMCCO_THREADS must be a non-negative integer, got `{v}`")),
        _ => Ok(None),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).target(env_logger::Target::Stderr).init();
    let cli = Cli::parse();
    let threads = match thread_cap() {
        Ok(t) => t,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(2);
        }
    };
    let code = swarmcco::exec::with_thread_cap(threads, move || match cli.command {
        Command::Run(args) => run::cmd_run(&args),
        Command::Validate(args) => validate::cmd_validate(&args),
    });
    ExitCode::from(code)
}

use std::path::PathBuf;
use std::process::ExitCode;

use apemo_cli::{
    cmd_frontier, cmd_report, cmd_run_llm, cmd_simulate, cmd_validate_config, CliError, ReportArgs,
    RunArgs,
};
use apemo_core::scheduler::PolicyKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "apemo", version, about = "Temporal compute-budget scheduling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run ABM blocks.
    Simulate(RunFlags),
    /// Run blocks against a chat model server.
    RunLlm(RunFlags),
    /// Delta tables, frontier table and plot data from persisted records.
    Report(ReportFlags),
    /// Frontier table only.
    Frontier(ReportFlags),
    /// Parse and check a config file.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    config: PathBuf,
    /// Block to run; all blocks of the matching executor when omitted.
    #[arg(long)]
    block: Option<String>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    stats_seed: Option<u64>,
    /// Skip cells already present in the output directory.
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    resume: bool,
}

#[derive(Args)]
struct ReportFlags {
    /// Directory holding the record files.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    block: Option<String>,
    /// Restrict comparisons to these baselines (repeatable).
    #[arg(long = "baseline")]
    baselines: Vec<PolicyKind>,
    #[arg(long)]
    stats_seed: Option<u64>,
}

impl RunFlags {
    fn into_args(self) -> RunArgs {
        let workers = self.workers.unwrap_or_else(|| {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        });
        RunArgs {
            config: self.config,
            block: self.block,
            out: self.out,
            workers,
            resume: self.resume,
            stats_seed: self.stats_seed,
            quiet: false,
        }
    }
}

impl ReportFlags {
    fn into_args(self) -> ReportArgs {
        ReportArgs {
            out: self.out,
            config: self.config,
            block: self.block,
            baselines: self.baselines,
            stats_seed: self.stats_seed,
            quiet: false,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(f) => cmd_simulate(&f.into_args()).map(|_| ()),
        Command::RunLlm(f) => cmd_run_llm(&f.into_args()).map(|_| ()),
        Command::Report(f) => {
            let out = cmd_report(&f.into_args())?;
            for b in &out.directional {
                eprintln!("note: block {b} is directional evidence only (no_fallback_rate < 1.0)");
            }
            Ok(())
        }
        Command::Frontier(f) => cmd_frontier(&f.into_args()).map(|_| ()),
        Command::ValidateConfig { config } => {
            print!("{}", cmd_validate_config(&config)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("apemo: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use cubegen::commands::{error_json, run_subcommand, Subcommand};
use cubegen::config::parse_config;

#[derive(Parser)]
#[command(
    name = "cubegen",
    version,
    about = "Cubemap 360° video generation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Project perspective frames to masked cubemaps and report coverage.
    Project(Common),
    /// Compute window coverage and the face generation order.
    Plan(Common),
    /// Dump the context provenance of every generation step.
    Context(Common),
    /// Sweep attention FLOPs over context length and time both paths.
    AttendBench(Common),
    /// Run the full generation loop and write equirect frames.
    Generate(Common),
    /// Seam and coverage statistics of a generation run.
    Metrics(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Command {
    fn split(self) -> (Subcommand, Common) {
        match self {
            Command::Project(c) => (Subcommand::Project, c),
            Command::Plan(c) => (Subcommand::Plan, c),
            Command::Context(c) => (Subcommand::Context, c),
            Command::AttendBench(c) => (Subcommand::AttendBench, c),
            Command::Generate(c) => (Subcommand::Generate, c),
            Command::Metrics(c) => (Subcommand::Metrics, c),
        }
    }
}

fn main() -> ExitCode {
    let (sub, args) = Cli::parse().command.split();
    let result = parse_config(&args.config)
        .and_then(|cfg| cfg.with_overrides(args.out, args.seed))
        .and_then(|cfg| run_subcommand(sub, &cfg));
    match result {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(if e.kind() == "config" { 2 } else { 1 })
        }
    }
}

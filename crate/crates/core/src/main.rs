use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lqterm::cli::{run, CommandKind, RunConfig};

/// Finite-horizon LQ optimal control with a fixed terminal state, solved
/// centrally or distributedly over a communication graph, plus optimal
/// consensus of heterogeneous fleets.
#[derive(Parser)]
#[command(name = "lqterm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for CSV and summary files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the number of grid intervals.
    #[arg(long)]
    grid_steps: Option<usize>,
    /// Override the outer iteration cap.
    #[arg(long)]
    max_n: Option<usize>,
    /// Override the inner consensus round cap.
    #[arg(long)]
    max_k: Option<usize>,
    /// Override the control-factor round cap.
    #[arg(long)]
    max_varpi: Option<usize>,
    /// Override the multiplier round cap.
    #[arg(long)]
    max_q: Option<usize>,
    /// Override the state round cap.
    #[arg(long)]
    max_w: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Full-information solve of the terminal-constrained LQ problem.
    Centralized(CommonArgs),
    /// Partial-information solve over the communication graph.
    Distributed {
        #[command(flatten)]
        common: CommonArgs,
        /// Also solve centrally and report per-agent deviations.
        #[arg(long)]
        with_reference: bool,
        /// Emit per-round consensus diagnostics as CSV.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Infinite-horizon optimal consensus of a heterogeneous fleet.
    Consensus {
        #[command(flatten)]
        common: CommonArgs,
        /// Batch file of homogeneous (C, D) comparison cases.
        #[arg(long)]
        batch_cases: Option<PathBuf>,
    },
    /// Structural validation of the scenario's decomposition assumptions.
    Validate(CommonArgs),
}

fn to_config(kind: CommandKind, common: CommonArgs) -> RunConfig {
    let mut config = RunConfig::new(kind, common.scenario, common.out);
    config.grid_steps = common.grid_steps;
    config.max_n = common.max_n;
    config.max_k = common.max_k;
    config.max_varpi = common.max_varpi;
    config.max_q = common.max_q;
    config.max_w = common.max_w;
    config
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match cli.command {
        Command::Centralized(common) => to_config(CommandKind::Centralized, common),
        Command::Distributed {
            common,
            with_reference,
            diagnostics,
        } => {
            let mut config = to_config(CommandKind::Distributed, common);
            config.with_reference = with_reference;
            config.diagnostics = diagnostics;
            config
        }
        Command::Consensus {
            common,
            batch_cases,
        } => {
            let mut config = to_config(CommandKind::Consensus, common);
            config.batch_cases = batch_cases;
            config
        }
        Command::Validate(common) => to_config(CommandKind::Validate, common),
    };
    ExitCode::from(run(&config) as u8)
}

//! `mfg-reflect`: batch driver for the solver, the finite-game experiments
//! and the oracle suites.

mod commands;
mod manifest;
mod output;
mod plot;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "mfg-reflect", version, about = "Reflected mean field games of controls: solver and experiments")]
struct Cli {
    /// Worker threads; 0 uses every available core. Outputs do not depend on it.
    #[arg(long, global = true, env = "MFG_REFLECT_JOBS", default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for a mean field equilibrium and write a solution bundle.
    SolveMfe(commands::SolveArgs),
    /// Simulate the N-player game under a bundle's equilibrium policy.
    SimulateNplayer(commands::NPlayerArgs),
    /// Estimate one player's unilateral deviation gap.
    NashGap(commands::GapArgs),
    /// Seed-replicated N-player versus mean-field comparison.
    Convergence(commands::ConvergenceArgs),
    /// Run the oracle and inequality suites.
    Check(commands::CheckArgs),
    /// Reflect one boundary/input pair read from CSV.
    Skorokhod(commands::SkorokhodArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::SolveMfe(a) => commands::cmd_solve_mfe(a, cli.jobs),
        Command::SimulateNplayer(a) => commands::cmd_simulate_nplayer(a, cli.jobs),
        Command::NashGap(a) => commands::cmd_nash_gap(a, cli.jobs),
        Command::Convergence(a) => commands::cmd_convergence(a, cli.jobs),
        Command::Check(a) => commands::cmd_check(a, cli.jobs),
        Command::Skorokhod(a) => commands::cmd_skorokhod(a, cli.jobs),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

//! `dimg`: solve, design, bound and simulate dynamic information
//! manipulation games from JSON scenarios.
//!
//! Exit status: 0 success, 1 validation or bound failure, 2 usage, parse or
//! I/O error, 3 history cap exceeded.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dimg_core::design::Scheme;
use dimg_core::scenario::{builtin, BUILTIN_NAMES};

use commands::{Format, RunConfig};

#[derive(Parser)]
#[command(
    name = "dimg",
    version,
    about = "Dynamic information manipulation games on finite POMDPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario against every model invariant.
    Validate(RunArgs),
    /// Solve the DM's problem: policy, value table and J_N per initial state.
    SolveDm(RunArgs),
    /// Solve the IM's design problem for the optimal DM policy.
    Design(RunArgs),
    /// Evaluate the deviation bound for a designed or supplied plan.
    Deviation(RunArgs),
    /// Closed-form record of the linear-Gaussian example.
    Gaussian(RunArgs),
    /// Print a bundled scenario as JSON, or list them without a name.
    Scenario {
        name: Option<String>,
        /// Action-grid resolution of paper-discrete.
        #[arg(long, value_parser = positive)]
        grid: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    #[value(name = "ex_ante")]
    ExAnte,
    #[value(name = "interim")]
    Interim,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON file, or `builtin:NAME`.
    #[arg(long, value_name = "PATH")]
    scenario: String,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "dimg-out")]
    out: PathBuf,
    /// Root seed of all randomness.
    #[arg(long, value_name = "U64", default_value_t = 0)]
    seed: u64,
    /// Monte-Carlo trajectories per run; 0 skips simulation.
    #[arg(long, value_name = "N", default_value_t = 10_000)]
    samples: usize,
    /// Action-grid resolution of built-ins with a continuous action set.
    #[arg(long, value_name = "N", value_parser = positive)]
    grid: Option<usize>,
    /// Cap on enumerated histories.
    #[arg(long, value_name = "N", value_parser = positive)]
    cap: Option<usize>,
    /// Design scheme.
    #[arg(long, value_enum, default_value = "ex_ante")]
    scheme: SchemeArg,
    /// Run the independent cross-checks as well.
    #[arg(long)]
    verify: bool,
    /// Format of tabular outputs.
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Plan file for `deviation` (a `plan.json` from `design`, or a bare plan).
    #[arg(long, value_name = "PATH")]
    plan: Option<PathBuf>,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be positive".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

impl RunArgs {
    fn config(self, command: &'static str) -> RunConfig {
        RunConfig {
            command,
            scenario: self.scenario,
            out: self.out,
            seed: self.seed,
            samples: self.samples,
            grid: self.grid,
            cap: self.cap,
            scheme: match self.scheme {
                SchemeArg::ExAnte => Scheme::ExAnte,
                SchemeArg::Interim => Scheme::Interim,
            },
            verify: self.verify,
            format: match self.format {
                FormatArg::Json => Format::Json,
                FormatArg::Csv => Format::Csv,
            },
            plan: self.plan,
        }
    }
}

fn print_scenario(name: Option<String>, grid: Option<usize>) -> commands::Outcome {
    let Some(name) = name else {
        for n in BUILTIN_NAMES {
            println!("{n}");
        }
        return Ok(());
    };
    let doc = builtin(&name, grid)?.to_doc();
    println!(
        "{}",
        serde_json::to_string_pretty(&doc).expect("scenario documents serialize")
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Validate(a) => commands::validate(&a.config("validate")),
        Command::SolveDm(a) => commands::solve_dm(&a.config("solve-dm")),
        Command::Design(a) => commands::design(&a.config("design")),
        Command::Deviation(a) => commands::deviation(&a.config("deviation")),
        Command::Gaussian(a) => commands::gaussian(&a.config("gaussian")),
        Command::Scenario { name, grid } => print_scenario(name, grid),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

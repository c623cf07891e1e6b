//! `starnet`: exact evaluation, shot sampling, optimisation and trade-off
//! curves for recycled nonlocality in star networks.
//!
//! Exit codes: 0 success, 2 config could not be read or parsed, 3 invalid
//! config or arguments, 4 numerical failure, 1 anything else (such as an
//! unwritable output path).

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use output::Format;
use starnet::optimizer::{Objective, Symmetry};

#[derive(Debug, Parser)]
#[command(name = "starnet", version, about = "Recycled Bell nonlocality in quantum star networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    pub format: Format,
    /// Worker threads; 1 is the sequential reference mode.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// S for every selection by closed form and by the Born rule, plus CHSH pairs.
    Evaluate {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Simulated experiment with bootstrap error bars.
    Sample {
        config: PathBuf,
        #[arg(long)]
        shots: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = starnet::sampler::DEFAULT_BOOTSTRAP)]
        bootstrap: usize,
        /// Give every input setting the same number of runs.
        #[arg(long)]
        fixed_allocation: bool,
        /// Per-run CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Search sharpnesses and angle maximising the chosen objective.
    Optimize {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value_t = SymmetryArg::None)]
        symmetry: SymmetryArg,
        #[arg(long, value_enum, default_value_t = ObjectiveArg::WorstCase)]
        objective: ObjectiveArg,
        /// Number of random starts.
        #[arg(long, default_value_t = 32)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Config file written at the optimum; defaults to `<output>.config.json`.
        #[arg(long)]
        config_out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Projective, local and unsharp curves in the (CHSH₁, CHSH₂) plane.
    Tradeoff {
        #[arg(long, default_value_t = 101)]
        points: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SymmetryArg {
    None,
    PerDepth,
    Full,
}

impl From<SymmetryArg> for Symmetry {
    fn from(s: SymmetryArg) -> Self {
        match s {
            SymmetryArg::None => Symmetry::None,
            SymmetryArg::PerDepth => Symmetry::PerDepth,
            SymmetryArg::Full => Symmetry::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    WorstCase,
    Average,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::WorstCase => Objective::WorstCaseS,
            ObjectiveArg::Average => Objective::AverageS,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match &cli.command {
        Command::Evaluate { common, .. }
        | Command::Sample { common, .. }
        | Command::Optimize { common, .. }
        | Command::Tradeoff { common, .. } => common.threads,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n.max(1));
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::from(1);
        }
    };
    let result = pool.install(|| match cli.command {
        Command::Evaluate { config, common } => commands::evaluate(&config, &common),
        Command::Sample {
            config,
            shots,
            seed,
            bootstrap,
            fixed_allocation,
            log,
            common,
        } => commands::sample(
            &config,
            &commands::SampleArgs {
                shots,
                seed,
                bootstrap,
                fixed_allocation,
                log,
            },
            &common,
        ),
        Command::Optimize {
            m,
            n,
            symmetry,
            objective,
            budget,
            seed,
            config_out,
            common,
        } => commands::optimize(
            &commands::OptimizeArgs {
                m,
                n,
                symmetry: symmetry.into(),
                objective: objective.into(),
                budget,
                seed,
                config_out,
            },
            &common,
        ),
        Command::Tradeoff { points, common } => commands::tradeoff(points, &common),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

//! `advsamp` command-line driver.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "advsamp", version, about = "Adversarial uncertainty sampling for neural-network potentials")]
struct Cli {
    /// Worker threads; 1 gives bitwise-reproducible output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// TOML config file; missing keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set committee.hidden_units=256`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (default: `$ADVSAMP_OUT/<command>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// One active-learning loop.
    Run {
        #[command(flatten)]
        common: Common,
        /// Re-run the config stored in a run directory and check records.csv.
        #[arg(long, value_name = "DIR")]
        replay: Option<PathBuf>,
    },
    /// Paired multi-run study of adversarial and random sampling.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        runs: usize,
    },
    /// One proposal round against a saved committee.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Committee manifest written by `train` or `run`.
        #[arg(long)]
        committee: PathBuf,
        /// Dataset CSV supplying seeds and the partition function.
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit a committee to a dataset CSV.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Grid RMSE plus mean-energy, force-variance and ground-truth heatmaps.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "mock_oracle")]
        committee: Option<PathBuf>,
        /// Evaluate a committee whose members equal the ground truth.
        #[arg(long)]
        mock_oracle: bool,
    },
    /// Active learning on the torsion chain with attacks on its dihedrals.
    CvDemo {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error [config]: --threads must be ≥ 1");
            return ExitCode::from(commands::exit_code("config"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is built once");
    }
    let result = match cli.command {
        Command::Run { common, replay } => commands::run(&common, replay.as_deref()),
        Command::Compare { common, runs } => commands::compare(&common, runs),
        Command::Attack { common, committee, data } => commands::attack(&common, &committee, &data),
        Command::Train { common, data } => commands::train(&common, &data),
        Command::Eval {
            common,
            committee,
            mock_oracle,
        } => commands::eval(&common, committee.as_deref(), mock_oracle),
        Command::CvDemo { common } => commands::cv_demo(&common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(commands::exit_code(e.category()))
        }
    }
}

//! `sls-synth`: synthesis, rollouts, calibration and benchmarks from the command line.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad input: missing files, malformed specs, bad arguments.
    User(String),
    /// The numerics failed on valid input.
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<sls_core::Error> for CliError {
    fn from(e: sls_core::Error) -> Self {
        if e.is_user_error() {
            CliError::User(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "sls-synth", version, about = "Robust output-feedback synthesis with tube guarantees")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, global = true, env = "SLS_SYNTH_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve a problem spec and write the nominal, gains and tubes.
    Synthesize {
        /// Spec JSON file, or a built-in name (lightdark, car, quadrotor).
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
        /// Plan the nominal without margins and attach tubes afterwards.
        #[arg(long)]
        certainty_equivalent: bool,
    },
    /// Monte Carlo closed-loop rollouts of a synthesized controller.
    Rollout {
        /// `result.json` written by `synthesize`.
        #[arg(long)]
        result: PathBuf,
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// `uniform` or `extreme`.
        #[arg(long, default_value = "uniform")]
        mode: String,
        /// Apply nominal inputs only.
        #[arg(long)]
        open_loop: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the Riccati solve against the dense oracle over a range of horizons.
    BenchHorizon {
        #[arg(long, value_delimiter = ',', default_value = "10,20,40,80")]
        horizons: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a polynomial envelope to residual data.
    Calibrate {
        /// CSV with state coordinates followed by the residual.
        #[arg(long)]
        data: PathBuf,
        /// `coords:degree`, coordinates by header name or index, e.g. `px,py:3`.
        #[arg(long)]
        basis: String,
        #[arg(long, default_value_t = sls_core::calibration::DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long, default_value_t = sls_core::calibration::DEFAULT_MU)]
        mu: f64,
        /// Output envelope JSON file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge tubes and rollouts into per-step summary tables.
    Report {
        /// Directory written by `synthesize`.
        #[arg(long)]
        synth: PathBuf,
        /// Directory written by `rollout`; defaults to `--synth`.
        #[arg(long)]
        rollouts: Option<PathBuf>,
        /// Defaults to the rollout directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: thread pool: {e}");
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::User(m) => eprintln!("error: {m}"),
                CliError::Numerical(m) => eprintln!("numerical failure: {m}"),
            }
            ExitCode::from(e.code())
        }
    }
}

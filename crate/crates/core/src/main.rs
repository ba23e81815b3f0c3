use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rbcert::cli;

/// Certified reduced-basis training and evaluation for affinely
/// parametrized coercive problems.
///
/// Exit codes: 0 success, 1 validation/config error, 2 numerical failure
/// (coercivity loss or rigor violation).
#[derive(Parser)]
#[command(name = "rbcert", version)]
struct Cli {
    /// Worker threads for training and validation sweeps (1 = fully
    /// sequential, reproducible timings)
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output directory override
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a reduced model with the certified greedy loop
    Offline {
        /// Run configuration (JSON)
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a trained model with certificates; truth data is never read
    Online {
        /// Trained model file (model.json)
        #[arg(long)]
        model: PathBuf,
        /// Parameter value as comma-separated numbers; repeatable
        #[arg(long = "mu", required = true)]
        mus: Vec<String>,
        /// Also write the lifted truth-space state (reads basis.json)
        #[arg(long)]
        lift: bool,
    },
    /// Audit certificates against truth solves on a test set
    Validate {
        /// Trained model file (model.json)
        #[arg(long)]
        model: PathBuf,
        /// Run configuration (JSON) describing the truth problem
        #[arg(long)]
        config: PathBuf,
    },
    /// Advection N-width demo plus thermal-block contrast run
    NwidthDemo {
        /// Run configuration (JSON)
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a parabolic reduced model with POD-Greedy
    PodGreedy {
        /// Run configuration (JSON)
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(args: &Cli) -> rbcert::Result<()> {
    let out = args.out.as_deref();
    match &args.command {
        Command::Offline { config } => cli::cmd_offline(config, out),
        Command::Online { model, mus, lift } => cli::cmd_online(model, mus, *lift, out),
        Command::Validate { model, config } => cli::cmd_validate(model, config, out),
        Command::NwidthDemo { config } => cli::cmd_nwidth_demo(config, out),
        Command::PodGreedy { config } => cli::cmd_pod_greedy(config, out),
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    if args.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(args.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot build thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(&args)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

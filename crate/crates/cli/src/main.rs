//! `fva`: runs the pipeline stages of an experiment configuration.
//!
//! Exit codes: 0 success, 2 validation failure, 3 solver failure,
//! 4 acceptance-gate failure in `verify`.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use run::{Outcome, Runner, Stage};

#[derive(Debug, Parser)]
#[command(
    name = "fva",
    version,
    about = "Shape sensitivity experiments on sublevel-set domains"
)]
struct Cli {
    #[arg(value_enum)]
    stage: Stage,
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output` or `out/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Seed of the direction family.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Only fails if a global pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let exp = match config::load(&cli.config) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("fva: {e}");
            return ExitCode::from(2);
        }
    };
    let out = run::resolve_out(cli.out.as_deref(), &exp);
    let runner = Runner {
        exp,
        out,
        seed: cli.seed,
    };
    match runner.run(cli.stage) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::GateFailed) => {
            eprintln!("fva: acceptance gate failed; see study.json");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("fva: {e}");
            ExitCode::from(run::exit_code(&e))
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use freq_unravel_cli::{parse_config_with, run, CliError, Mode, Overrides, WORKERS_ENV};

/// Frequency-domain quantum trajectory simulator.
#[derive(Debug, Parser)]
#[command(name = "freq-unravel", version)]
struct Args {
    /// trajectory, ensemble, spectrum, reconstruct or validate
    mode: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_workers() -> Result<(), CliError> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{WORKERS_ENV}: expected a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("{WORKERS_ENV}: {e}")))
}

fn main_inner(args: Args) -> Result<(), CliError> {
    configure_workers()?;
    let text = std::fs::read_to_string(&args.config).map_err(|source| CliError::Io {
        path: args.config.display().to_string(),
        source,
    })?;
    let overrides = Overrides {
        mode: Some(args.mode.parse::<Mode>()?),
        seed: args.seed,
        n_trials: args.trials,
        output: args.out,
    };
    let config = parse_config_with(&text, &overrides)?;
    let outcome = run(&config)?;
    for f in outcome.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        // usage errors are configuration errors; help and version succeed
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match main_inner(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("freq-unravel: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

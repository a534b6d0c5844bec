use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use nlhomog::config::Study;

/// Effective drift and diffusion for nonlocal periodic jump-kernel operators.
#[derive(Debug, Parser)]
#[command(name = "nlhomog", version)]
struct Cli {
    /// Study to run.
    #[arg(value_enum)]
    study: Study,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; NLHOMOG_THREADS takes precedence.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    verbose: bool,
}

fn thread_count(cli: Option<usize>) -> Result<Option<usize>, String> {
    match std::env::var("NLHOMOG_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| format!("NLHOMOG_THREADS must be a positive integer, got '{v}'")),
        Err(_) => Ok(cli),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match nlhomog::harness::run(cli.study, &cli.config, cli.out) {
        Ok(artifacts) => {
            for path in &artifacts.files {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::process::ExitCode;

use clap::Parser;
use radfield::cli::Cli;

mod commands;

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("RFLD_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow::anyhow!("RFLD_THREADS must be a positive integer, got `{v}`"))?;
        anyhow::ensure!(n > 0, "RFLD_THREADS must be a positive integer");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

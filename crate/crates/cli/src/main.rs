use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use toolrec::commands::{run, Command};
use toolrec::config::{PipelineConfig, CONFIG_ENV};
use toolrec::CliError;

/// Recommend security tool APIs from natural-language queries.
#[derive(Debug, Parser)]
#[command(name = "toolrec", version)]
struct Cli {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = (|| {
        let mut cfg = match &cli.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        run(cli.command, &cfg, &mut std::io::stdout().lock())
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(CliError::exit_code(&e) as u8)
        }
    }
}

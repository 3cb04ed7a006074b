mod args;
mod commands;
mod settings;

use std::process::ExitCode;

use ckm_core::kv::KvDoc;
use ckm_core::{CkmError, Result};
use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use settings::Settings;

fn threads(cli: &Cli) -> Result<Option<usize>> {
    if cli.threads.is_some() {
        return Ok(cli.threads);
    }
    match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CkmError::io(p, e))?;
            KvDoc::parse(&text)?.parse_value("threads")
        }
        None => Ok(None),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = threads(&cli)? {
        if n == 0 {
            return Err(CkmError::invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CkmError::invalid(format!("thread pool: {e}")))?;
    }
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::GenScenes(a) => commands::gen_scenes(a, Settings::new("gen-scenes", cfg)?),
        Command::Ingest(a) => commands::ingest(a, Settings::new("ingest", cfg)?),
        Command::Priors(a) => commands::priors(a, Settings::new("priors", cfg)?),
        Command::Sample(a) => commands::sample_cmd(a, Settings::new("sample", cfg)?),
        Command::Complete(a) => commands::complete(a, Settings::new("complete", cfg)?),
        Command::Train(a) => commands::train_cmd(a, Settings::new("train", cfg)?),
        Command::Scm(a) => commands::scm(a, Settings::new("scm", cfg)?),
        Command::Eval(a) => commands::eval(a, Settings::new("eval", cfg)?),
        Command::Selftest(a) => commands::selftest(a, Settings::new("selftest", cfg)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

mod commands;
mod config;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use kgat_core::artifact::{read_document, SCHEMA_VERSION};
use kgat_core::{Error, Result};

use commands::Context;
use config::{Cli, Command, RunConfig};

const EXIT_INPUT: u8 = 2;
const EXIT_PROCESSING: u8 = 3;

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
    exit_code: u8,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    schema_version: u64,
    error: ErrorBody<'a>,
}

fn exit_code(err: &Error) -> u8 {
    if err.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_PROCESSING
    }
}

fn run(cli: Cli) -> Result<()> {
    let run: RunConfig = match &cli.config {
        Some(path) => read_document(path)?,
        None => RunConfig::default(),
    };

    let level = match cli.verbose.max(run.verbosity.unwrap_or(0)) {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();

    if let Some(n) = cli.threads.or(run.threads) {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot configure thread pool: {e}")))?;
    }

    let out = cli
        .out
        .clone()
        .or_else(|| run.out.clone())
        .ok_or_else(|| Error::Config("an output path is required (--out)".into()))?;
    let ctx = Context {
        seed: cli.seed.or(run.seed),
        out,
        run,
    };

    match &cli.command {
        Command::Extract(a) => commands::extract(&ctx, a),
        Command::Stability(a) => commands::stability(&ctx, a),
        Command::Weights(a) => commands::weights(&ctx, a),
        Command::Render(a) => commands::render(&ctx, a),
        Command::VerifyTheorem(a) => commands::verify_theorem(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            let report = ErrorReport {
                schema_version: SCHEMA_VERSION,
                error: ErrorBody {
                    kind: err.kind(),
                    message: err.to_string(),
                    exit_code: code,
                },
            };
            let line = serde_json::to_string(&report)
                .unwrap_or_else(|_| format!("{{\"error\":\"{err}\"}}"));
            let _ = writeln!(std::io::stderr(), "{line}");
            ExitCode::from(code)
        }
    }
}

mod cli;
mod commands;
mod error;
mod output;

use std::process::ExitCode;

use anchorscope::jsonl::OnError;
use clap::Parser;

use crate::cli::{Cli, Command, OnErrorArg};
use crate::error::{CliError, JsonError};

/// Log filter, e.g. `ANCHORSCOPE_LOG=debug`.
const LOG_ENV: &str = "ANCHORSCOPE_LOG";

fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = commands::Ctx {
        on_error: match cli.on_error {
            OnErrorArg::Fail => OnError::FailFast,
            OnErrorArg::Skip => OnError::Skip,
        },
    };
    match &cli.command {
        Command::Rf(a) => commands::rf(a),
        Command::Priors(a) => commands::priors(a),
        Command::StrideAdvice(a) => commands::stride_advice(a),
        Command::Coverage(a) => commands::coverage(&ctx, a),
        Command::Loss(a) => commands::loss(&ctx, a),
        Command::Nms(a) => commands::nms(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Synth(a) => commands::synth(a),
        #[cfg(feature = "dtld")]
        Command::ImportDtld(a) => commands::import_dtld(a),
    }
}

fn report(err: &CliError, json: bool) -> ExitCode {
    let code = err.exit_code();
    if json {
        let e = JsonError {
            kind: err.kind(),
            message: err.to_string(),
            exit_code: code,
        };
        eprintln!(
            "{}",
            serde_json::to_string(&serde_json::json!({ "error": e })).unwrap_or_default()
        );
    } else {
        eprintln!("error: {err}");
    }
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let json_errors = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            if json_errors {
                return report(
                    &CliError::Usage(e.render().to_string().trim().to_string()),
                    true,
                );
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => report(&e, cli.json_errors),
        Err(_) => {
            if cli.json_errors {
                eprintln!(r#"{{"error":{{"kind":"internal","message":"panic","exit_code":2}}}}"#);
            }
            ExitCode::from(2)
        }
    }
}

mod cli;
mod commands;
mod manifest;
mod output;
mod pipeline;
mod stages;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use cli::{AnalyzeKind, Cli, Command, RunArgs};
use manifest::RunManifest;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(err: &xalign::Error) -> u8 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_DATA
    }
}

fn execute(command: Command) -> xalign::Result<()> {
    match command {
        Command::Synth(a) => commands::synth(&a),
        Command::Split(a) => commands::split(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Analyze { kind } => match kind {
            AnalyzeKind::Dispersion(a) => commands::dispersion(&a),
            AnalyzeKind::Polysemy(a) => commands::polysemy(&a),
        },
        Command::Run(a) => pipeline::run(&a),
        Command::Replay(a) => {
            let record = RunManifest::read(&a.manifest)?;
            record.verify_inputs()?;
            if record.subcommand == "run" {
                let set = record
                    .flags
                    .iter()
                    .map(|(k, v)| format!("{k}={}", v.as_str().unwrap_or_default()))
                    .collect();
                return pipeline::run(&RunArgs {
                    config: None,
                    set,
                    force: a.force,
                });
            }
            let mut argv = vec![OsString::from("xalign")];
            argv.extend(record.argv().into_iter().map(OsString::from));
            if a.force {
                argv.push("--force".into());
            }
            let cli = Cli::try_parse_from(argv).map_err(|e| xalign::Error::Format {
                path: a.manifest.clone(),
                reason: format!("recorded flags no longer parse: {e}"),
            })?;
            if matches!(cli.command, Command::Replay(_)) {
                return Err(xalign::Error::Validation(
                    "a manifest cannot replay a replay".into(),
                ));
            }
            execute(cli.command)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

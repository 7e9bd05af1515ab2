mod args;
mod commands;
mod report;

use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use critpoint::montecarlo::configure_threads;

use args::{Cli, Command, Format};

const EXIT_PRECONDITION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let out = cli.command.output();
    configure_threads(out.threads);

    let report = match commands::dispatch(&cli.command) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_PRECONDITION });
        }
    };
    let text = match out.format {
        Format::Json => report.to_json(),
        Format::Csv => report.to_csv(),
    };
    let written = match &out.output {
        Some(path) => std::fs::write(path, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    };
    if let Err(e) = written {
        eprintln!("error: cannot write report: {e}");
        return ExitCode::from(EXIT_PRECONDITION);
    }
    let failed = matches!(cli.command, Command::Validate { .. })
        && report.summary.get("failures").and_then(|f| f["count"].as_u64()).unwrap_or(0) > 0;
    if failed {
        ExitCode::from(EXIT_NUMERICAL)
    } else {
        ExitCode::SUCCESS
    }
}

// SPDX-License-Identifier: Apache-2.0

mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use frametrace::{Error, Execution, Result};

use args::{Cli, Command};

const EXIT_DOMAIN: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    if e.is_transport() {
        EXIT_TRANSPORT
    } else if matches!(e, Error::Config(_)) {
        EXIT_USAGE
    } else {
        EXIT_DOMAIN
    }
}

fn execution(threads: Option<usize>) -> Result<Execution> {
    match threads {
        None => Ok(Execution::Parallel),
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(1) => Ok(Execution::Serial),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(Execution::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Execution::Serial),
    }
}

fn run(cli: Cli) -> Result<()> {
    let exec = execution(cli.threads)?;
    match cli.command {
        Command::Frames(a) => commands::frames(a),
        Command::Generate(a) => commands::generate(a),
        Command::Zeroshot(a) => commands::zeroshot(a),
        Command::Agreement(a) => commands::agreement_cmd(a),
        Command::ReportCorrectness(a) => commands::report_correctness(a),
        Command::SynthModel(a) => commands::synth_model(a),
        Command::Trace(a) => commands::trace(a, exec),
        Command::Extract(a) => commands::extract(a, exec),
        Command::Probe(a) => commands::probe(a, exec),
        Command::Render(a) => commands::render(a),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("ERROR:{}: {e}", e.category());
    ExitCode::from(exit_code(e))
}

fn main() -> ExitCode {
    let argv = match config::merge(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("ERROR:usage: {}", msg.trim_start_matches("error: ").trim_end());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

use std::process::ExitCode;

use clap::error::ErrorKind;
use eqgan_cli::{cmd_serve, parse_from, run, CliError, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match parse_from(std::env::args_os()) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.kind().as_str().map(String::from).unwrap_or_else(|| e.to_string());
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&message).trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).to_json_line());
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Serve(args) => cmd_serve(args).map(|()| Vec::new()),
        other => run(other),
    };
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::FAILURE
        }
    }
}

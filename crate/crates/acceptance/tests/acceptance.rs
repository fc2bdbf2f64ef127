//! Runs every acceptance criterion and prints one PASS/FAIL line each.
//! Arguments that do not start with `--` filter criteria by name.

use std::path::PathBuf;
use std::process::ExitCode;

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with("--")).collect();
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let outcomes = acceptance::run_all(&dir, &filters, |o| println!("{}", o.line()));
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Runs every acceptance criterion at its stated tolerance and prints one
//! PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;

use erw_cli::config::ExperimentConfig;
use erw_cli::verify::{run_all, Verifier};

fn main() -> ExitCode {
    let mut cfg = ExperimentConfig::default();
    cfg.threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let verifier = Verifier::from_config(&cfg, Some(PathBuf::from(env!("CARGO_BIN_EXE_erwlab"))));
    let ids: Vec<u32> = (1..=12).collect();
    let results = run_all(&verifier, &ids, |c| {
        println!("{}", c.line());
        for d in &c.details {
            println!("       {d}");
        }
    });
    let failed = results.iter().filter(|c| !c.pass).count();
    println!("\nacceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

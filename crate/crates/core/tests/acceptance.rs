//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Tables go to `$CARGO_TARGET_TMPDIR/acceptance`.

use std::path::PathBuf;
use std::process::ExitCode;

use semiflow::accept::{run_suite, SuiteOptions};

fn main() -> ExitCode {
    let out_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let opts = SuiteOptions { out_dir: Some(out_dir.clone()), ..SuiteOptions::default() };
    println!("acceptance: seed {}, {} thread(s), determinism re-run on {}", opts.seed, opts.threads, opts.rerun_threads);
    let report = match run_suite(&opts, |o| println!("{}", o.line())) {
        Ok(r) => r,
        Err(e) => {
            println!("FAIL acceptance suite aborted: {e}");
            return ExitCode::FAILURE;
        }
    };
    let passed = report.outcomes.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria passed; summary hash {}", report.outcomes.len(), report.summary_hash);
    println!("tables in {}", out_dir.display());
    if report.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

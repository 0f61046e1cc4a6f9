use std::process::ExitCode;

use mw_harmonics_cli::suite::{run_criterion, SuiteOptions, Tier, CRITERIA};

fn main() -> ExitCode {
    let opts = SuiteOptions::new(Tier::Full);
    let mut failed = 0;
    for (id, _) in CRITERIA {
        let r = run_criterion(id, &opts);
        println!("{}", r.line());
        failed += usize::from(!r.passed);
    }
    println!("acceptance: {} of {} criteria passed", CRITERIA.len() - failed, CRITERIA.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}

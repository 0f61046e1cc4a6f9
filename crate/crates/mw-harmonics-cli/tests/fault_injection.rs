use mw_harmonics_cli::suite::{run_criterion, SuiteOptions, Tier};

#[test]
fn loose_john_tolerance_breaks_the_sandwich() {
    let opts = SuiteOptions { john_tau: 1.0, ..SuiteOptions::new(Tier::Fast) };
    let r = run_criterion(1, &opts);
    assert!(!r.passed, "criterion 1 passed with john_tau = 1: {}", r.line());
}

#[test]
fn default_tolerance_passes_the_sandwich() {
    let r = run_criterion(1, &SuiteOptions::new(Tier::Fast));
    assert!(r.passed, "{}", r.line());
}

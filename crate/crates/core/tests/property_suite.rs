use cocoa::verify::{property_suite, SuiteOptions};

#[test]
fn hundred_trials_pass() {
    let start = std::time::Instant::now();
    let report = property_suite(&SuiteOptions::new(0, 100));
    assert!(report.passed(), "{}", report.summary());
    assert!(start.elapsed().as_secs() < 300);
}

#[test]
fn halved_sigma_prime_min_breaks_lower_bound() {
    let mut opts = SuiteOptions::new(0, 30);
    opts.sigma_prime_scale = Some(0.5);
    let dir = tempfile::tempdir().unwrap();
    opts.dump_dir = Some(dir.path().to_path_buf());
    let report = property_suite(&opts);
    assert!(report.failed("lower_bound"), "{}", report.summary());
    assert!(!report.dumps.is_empty());
    for d in &report.dumps {
        assert!(d.exists());
    }
}

#[test]
fn zero_trials_is_an_empty_pass() {
    let report = property_suite(&SuiteOptions::new(3, 0));
    assert!(report.outcomes.is_empty());
    assert!(report.passed());
}

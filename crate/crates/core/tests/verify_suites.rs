use bethe_core::checks;

#[test]
fn every_suite_passes() {
    let reports = checks::run_all(2024);
    for r in &reports {
        println!("{r}");
    }
    assert!(reports.iter().all(|r| r.passed));
}

//! Every bundled fixture run against a full run of its scenario.

use pilotwave::ensemble::run_ensemble;
use pilotwave::scenarios::{check_fixture, fixture_names, load_fixture};

fn check(name: &str) {
    let fixture = load_fixture(name).unwrap();
    let report = run_ensemble(&fixture.scenario().unwrap()).unwrap().report;
    let verdicts = check_fixture(&fixture, &report).unwrap();
    let failed: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.passed)
        .map(|v| format!("{}: measured {:e}, tolerance {:e}", v.property, v.measured, v.tolerance))
        .collect();
    assert!(failed.is_empty(), "{name}: {}", failed.join("; "));
}

macro_rules! fixture_tests {
    ($($test:ident => $name:literal),* $(,)?) => {
        $(#[test] fn $test() { check($name); })*

        #[test]
        fn every_fixture_has_a_test() {
            let covered = [$($name),*];
            for name in fixture_names() {
                assert!(covered.contains(&name), "{name} has no test");
            }
        }
    };
}

fixture_tests! {
    free_gaussian => "free_gaussian",
    double_slit => "double_slit",
    harmonic_ground => "harmonic_ground",
    vacuum_stationary => "vacuum_stationary",
    stern_gerlach_50_50 => "stern_gerlach_50_50",
    stern_gerlach_25_75 => "stern_gerlach_25_75",
    qed_toy_emission => "qed_toy_emission",
    qed_toy_grid => "qed_toy_grid",
    moving_node => "moving_node",
}

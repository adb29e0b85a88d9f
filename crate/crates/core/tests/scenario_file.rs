use std::path::Path;

use safenet_core::sim::{scenario_single_integrator, single_integrator_file, Scenario, ScenarioFile};

fn shipped() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/single_integrator.toml"))
}

#[test]
fn shipped_file_matches_builtin() {
    let text = std::fs::read_to_string(shipped()).unwrap();
    let file: ScenarioFile = toml::from_str(&text).unwrap();
    assert_eq!(file, single_integrator_file());
    assert_eq!(Scenario::load(shipped()).unwrap(), scenario_single_integrator());
}

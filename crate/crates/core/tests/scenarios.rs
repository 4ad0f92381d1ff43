use std::path::PathBuf;

use sirvax::config::{Scenario, ScenarioConfig};

fn shipped() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    files.sort();
    files
}

#[test]
fn shipped_scenarios_load_and_round_trip() {
    let files = shipped();
    assert!(files.len() >= 3);
    for path in files {
        let sc = Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let model = sc.model().unwrap();
        sc.sim_config(&model).unwrap();
        sc.budget(&model).unwrap();

        let text = sc.config.to_toml_string().unwrap();
        let again = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(again, sc.config, "{}", path.display());
        let rebuilt = Scenario::from_str(&text, sc.base_dir.clone()).unwrap().model().unwrap();
        assert_eq!(rebuilt.beta(), model.beta());
        assert_eq!(rebuilt.mu(), model.mu());
        assert_eq!(rebuilt.s0(), model.s0());
        assert_eq!(rebuilt.i0(), model.i0());
    }
}

#[test]
fn figure_scenario_builds_its_coefficients() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/paper.toml");
    let model = Scenario::load(&path).unwrap().model().unwrap();
    let g = model.grid();
    let x = g.nodes();
    for i in [0, 17, g.n() - 1] {
        assert!((model.mu().values()[i] - (0.4 * x[i] + 0.1)).abs() < 1e-15);
        for j in [0, 3, g.n() - 1] {
            let want = 0.05 * (-(x[i] - x[j]).powi(2) / 0.05).exp();
            assert!((model.beta().get(i, j) - want).abs() < 1e-15);
        }
    }
    let want_s0 = (-(0.0_f64 - 0.3).powi(2) / (2.0 * 0.25)).exp() / (0.5 * (2.0 * std::f64::consts::PI).sqrt());
    assert!((model.s0().values()[0] - want_s0).abs() < 1e-14);
}

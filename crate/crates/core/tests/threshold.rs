//! The sign of λ1 against simulated attack fractions for shrinking seeds.

use std::path::PathBuf;

use sirvax::config::Scenario;
use sirvax::{classify_threshold, simulate, Classification, EpidemicModel, VaccinationPlan};

const ETA: f64 = 1e-3;

fn gaussian_family(b: f64) -> EpidemicModel {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/paper.toml");
    let text = std::fs::read_to_string(path).unwrap().replace("b = 0.05", &format!("b = {b}")).replace("n = 101", "n = 41");
    Scenario::from_str(&text, PathBuf::new()).unwrap().model().unwrap()
}

fn attack_fractions(model: &EpidemicModel) -> Vec<f64> {
    [0.1, 0.01, 0.001]
        .iter()
        .map(|&c| {
            let m = model.with_i0(model.i0().scale(c)).unwrap();
            let mut cfg = sirvax::SimConfig::for_model(&m);
            cfg.dt = 0.01;
            cfg.t_max = 2000.0;
            let traj = simulate(&m, &VaccinationPlan::none(m.grid().clone()), &cfg).unwrap();
            assert!(traj.converged);
            let s0 = m.s0().integral();
            (s0 - traj.s_inf().integral()) / s0
        })
        .collect()
}

#[test]
fn figure_coefficients_do_not_spread() {
    let m = gaussian_family(0.05);
    let t = classify_threshold(&m).unwrap();
    assert_eq!(t.classification, Classification::NoSpread);
    let attack = attack_fractions(&m);
    assert!(attack.iter().all(|&a| a < ETA), "{attack:?}");
    // the attack shrinks with the seed
    assert!(attack.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn stronger_contacts_spread_for_every_seed() {
    let m = gaussian_family(2.0);
    let t = classify_threshold(&m).unwrap();
    assert_eq!(t.classification, Classification::Spreads);
    let attack = attack_fractions(&m);
    assert!(attack.iter().all(|&a| a > ETA), "{attack:?}");
}

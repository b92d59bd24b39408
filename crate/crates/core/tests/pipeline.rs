mod common;

use freeway_rbpf::harness::demo::observe;
use freeway_rbpf::harness::filter::Observations;
use freeway_rbpf::harness::{generate_truth, run_filter, Mode, Scenario, ScenarioConfig};

fn short_reference(horizon_s: f64, particles: usize) -> Scenario {
    Scenario::new(ScenarioConfig {
        horizon_s,
        particles,
        ..ScenarioConfig::default()
    })
    .unwrap()
}

#[test]
fn single_particle_open_loop_replays_truth() {
    let mut scn = short_reference(1800.0, 1);
    scn.cfg.init.noise_frac = 0.0;
    scn.cfg.seeds.filter = scn.cfg.seeds.truth;
    let truth = generate_truth(&scn, scn.cfg.seeds.truth).unwrap();
    let obs = Observations {
        loops: Vec::new(),
        probes: Vec::new(),
        boundary: Vec::new(),
        penetration_rate: 0.0,
    };
    let r = run_filter(&scn, Mode::OpenLoop, &obs, None).unwrap();
    let t = truth.grid(&scn.net);
    for row in 0..scn.net.mainline().len() {
        let same = r
            .estimate
            .row(row)
            .iter()
            .zip(t.row(row))
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "row {row} differs");
    }
}

#[test]
fn scenario_file_matches_builtin_reference() {
    let path = common::repo_root().join("scenarios/reference/scenario.toml");
    let from_file = Scenario::new(ScenarioConfig::load(&path).unwrap()).unwrap();
    let builtin = Scenario::reference();
    assert_eq!(from_file.spec, builtin.spec);
    assert_eq!(from_file.net, builtin.net);
    assert_eq!(from_file.profile, builtin.profile);
    assert_eq!(from_file.detectors, builtin.detectors);
    assert_eq!(from_file.cfg.noise, builtin.cfg.noise);
    assert_eq!(from_file.cfg.likelihood, builtin.cfg.likelihood);
    assert_eq!(from_file.cfg.seeds, builtin.cfg.seeds);
    assert_eq!(from_file.cfg.demo, builtin.cfg.demo);
}

#[test]
fn filter_runs_are_reproducible() {
    let scn = short_reference(1200.0, 50);
    let truth = generate_truth(&scn, scn.cfg.seeds.truth).unwrap();
    let obs = observe(&scn, &truth, 0.03);
    let grid = truth.grid(&scn.net);
    let a = run_filter(&scn, Mode::Fused, &obs, Some(&grid)).unwrap();
    let b = run_filter(&scn, Mode::Fused, &obs, Some(&grid)).unwrap();
    assert_eq!(a.estimate, b.estimate);
    assert_eq!(a.mape, b.mape);
    assert_eq!(a.stats, b.stats);
}

#[test]
fn every_mode_produces_finite_bounded_estimates() {
    let scn = short_reference(1800.0, 40);
    let truth = generate_truth(&scn, scn.cfg.seeds.truth).unwrap();
    let obs = observe(&scn, &truth, 0.03);
    let grid = truth.grid(&scn.net);
    for mode in Mode::ALL {
        let r = run_filter(&scn, mode, &obs, Some(&grid)).unwrap();
        for (row, &link) in scn.net.mainline().iter().enumerate() {
            let jam = scn.net.fd(link).unwrap().jam_density();
            assert!(r
                .estimate
                .row(row)
                .iter()
                .all(|v| v.is_finite() && (0.0..=jam + 1e-12).contains(v)));
        }
        let m = r.mape.unwrap();
        assert!(m.overall.is_finite(), "{mode}");
        if mode.uses_loops() {
            assert!(r.stats.measurements_used > 0, "{mode}");
        }
        if mode == Mode::OpenLoop {
            assert_eq!(r.stats.assimilations, 0);
        }
    }
}

#[test]
fn held_out_detectors_are_not_assimilated() {
    let mut cfg = ScenarioConfig {
        horizon_s: 1800.0,
        particles: 30,
        mode: Mode::LoopsOnly,
        ..ScenarioConfig::default()
    };
    let all = Scenario::new(cfg.clone()).unwrap();
    cfg.held_out = vec![all.detectors[2], all.detectors[5]];
    let scn = Scenario::new(cfg).unwrap();
    let truth = generate_truth(&scn, scn.cfg.seeds.truth).unwrap();
    let obs = observe(&scn, &truth, 0.0);
    let with_all = run_filter(&all, Mode::LoopsOnly, &obs, None).unwrap();
    let held = run_filter(&scn, Mode::LoopsOnly, &obs, None).unwrap();
    let bins = obs.loops.len() / all.detectors.len();
    assert_eq!(
        with_all.stats.measurements_used + with_all.stats.outliers,
        obs.loops.len()
    );
    assert_eq!(
        held.stats.measurements_used + held.stats.outliers,
        obs.loops.len() - 2 * bins
    );
    assert_eq!(held.held_out.len(), 2);
    assert!(held.held_out.iter().all(|h| h.samples == bins));
}

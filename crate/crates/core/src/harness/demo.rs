//! Multi-seed sweep over filter modes and penetration rates.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::{Mode, Seeds};
use super::export::{grid_to_csv, grid_to_pgm, meta_txt, report_csv};
use super::filter::{run_filter, Observations, RunReport};
use super::metrics::Grid;
use super::scenario::Scenario;
use super::simulate::{
    generate_truth, simulate_boundary_records, simulate_loop_measurements,
    simulate_probe_measurements, Truth,
};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRun {
    pub mode: Mode,
    pub penetration_rate: f64,
}

/// Open loop, loops only, then fused and probes-only at each rate.
pub fn table_runs(rates: &[f64]) -> Vec<SweepRun> {
    let mut runs = vec![
        SweepRun {
            mode: Mode::OpenLoop,
            penetration_rate: 0.0,
        },
        SweepRun {
            mode: Mode::LoopsOnly,
            penetration_rate: 0.0,
        },
    ];
    for mode in [Mode::Fused, Mode::ProbesOnly] {
        for &pr in rates {
            runs.push(SweepRun {
                mode,
                penetration_rate: pr,
            });
        }
    }
    runs
}

/// Simulated observations of a truth under the scenario's measurement seed.
pub fn observe(scn: &Scenario, truth: &Truth, pr: f64) -> Observations {
    let cfg = &scn.cfg;
    let seed = cfg.seeds.measurement;
    Observations {
        loops: simulate_loop_measurements(
            truth,
            scn.net.dt(),
            &scn.detectors,
            cfg.measurement_noise_frac,
            seed,
        ),
        probes: simulate_probe_measurements(
            truth,
            &scn.net,
            &scn.geometry,
            pr,
            cfg.measurement_noise_frac,
            seed,
        ),
        boundary: simulate_boundary_records(truth, &scn.net, cfg.measurement_noise_frac, seed),
        penetration_rate: pr,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seeds: Seeds,
    pub truth: Grid,
    pub reports: Vec<RunReport>,
}

/// One truth and one filter run per entry of `runs`, all sharing seeds.
pub fn run_seed(
    scn: &Scenario,
    seeds: Seeds,
    runs: &[SweepRun],
) -> Result<SeedOutcome, HarnessError> {
    let mut scn = scn.clone();
    scn.cfg.seeds = seeds;
    let truth = generate_truth(&scn, seeds.truth)?;
    let grid = truth.grid(&scn.net);
    let mut reports = Vec::with_capacity(runs.len());
    for run in runs {
        let obs = observe(&scn, &truth, run.penetration_rate);
        reports.push(run_filter(&scn, run.mode, &obs, Some(&grid))?);
    }
    Ok(SeedOutcome {
        seeds,
        truth: grid,
        reports,
    })
}

/// Runs `run_seed` for seed triples `0..count`, offset from the scenario's.
pub fn sweep(
    scn: &Scenario,
    count: usize,
    runs: &[SweepRun],
) -> Result<Vec<SeedOutcome>, HarnessError> {
    (0..count)
        .map(|i| run_seed(scn, scn.cfg.seeds.offset(i as u64), runs))
        .collect()
}

/// Mean overall, congested and freeflow MAPE of each run across seeds.
pub fn summary_csv(outcomes: &[SeedOutcome]) -> String {
    let mut out = String::from("run,seeds,overall,congested,freeflow\n");
    let Some(first) = outcomes.first() else {
        return out;
    };
    for (i, r) in first.reports.iter().enumerate() {
        let mapes: Vec<_> = outcomes.iter().filter_map(|o| o.reports[i].mape).collect();
        let mean = |f: &dyn Fn(&super::metrics::Mape) -> Option<f64>| {
            let v: Vec<f64> = mapes.iter().filter_map(f).collect();
            if v.is_empty() {
                String::new()
            } else {
                (v.iter().sum::<f64>() / v.len() as f64).to_string()
            }
        };
        writeln!(
            out,
            "{},{},{},{},{}",
            r.label,
            mapes.len(),
            mean(&|m| Some(m.overall)),
            mean(&|m| m.congested),
            mean(&|m| m.freeflow)
        )
        .unwrap();
    }
    out
}

/// Full sweep written to `out`: `summary.csv`, `config.toml`, and one
/// directory per seed with `truth.csv`, `estimate_<run>.csv`,
/// `report.csv`, `meta.txt` and optional graymaps.
pub fn run_demo(scn: &Scenario, out: &Path) -> Result<Vec<SeedOutcome>, HarnessError> {
    let demo = &scn.cfg.demo;
    let runs = table_runs(&demo.penetration_rates);
    let outcomes = sweep(scn, demo.seeds, &runs)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), scn.cfg.to_toml())?;
    fs::write(out.join("summary.csv"), summary_csv(&outcomes))?;
    let jam = scn
        .net
        .mainline()
        .iter()
        .filter_map(|&l| scn.net.fd(l).map(|fd| fd.jam_density()))
        .fold(0.0, f64::max);
    for (i, o) in outcomes.iter().enumerate() {
        let dir = out.join(format!("seed_{i:02}"));
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("truth.csv"), grid_to_csv(&o.truth))?;
        if demo.pgm {
            fs::write(dir.join("truth.pgm"), grid_to_pgm(&o.truth, jam))?;
        }
        for r in &o.reports {
            fs::write(
                dir.join(format!("estimate_{}.csv", r.label)),
                grid_to_csv(&r.estimate),
            )?;
            if demo.pgm {
                fs::write(
                    dir.join(format!("estimate_{}.pgm", r.label)),
                    grid_to_pgm(&r.estimate, jam),
                )?;
            }
        }
        fs::write(dir.join("report.csv"), report_csv(&o.reports))?;
        let mut cfg = scn.cfg.clone();
        cfg.seeds = o.seeds;
        fs::write(dir.join("meta.txt"), meta_txt(&cfg, &o.reports))?;
    }
    Ok(outcomes)
}

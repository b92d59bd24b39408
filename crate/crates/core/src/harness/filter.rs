//! Full filter runs over a scenario horizon.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{BoundarySource, Mode, Seeds};
use super::metrics::{compute_mape, critical_densities, Grid, Mape};
use super::scenario::Scenario;
use super::simulate::warm_start;
use super::HarnessError;
use crate::ctm::DensityState;
use crate::data::{
    bin_measurements, boundary_series, probe_measurements, DemandProvider, LoopRecord, MatchStats,
    ProbeRecord, BIN_SECONDS,
};
use crate::fusion::{
    assimilate_density, assimilate_fused, predict, Ensemble, FilterStreams, Measurement,
};
use crate::network::LinkId;
use crate::rng::{stream, Domain};
use crate::smc::{Reweigh, SmcError};

/// Everything a filter run may observe.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    /// Detector density readings, held-out detectors included.
    pub loops: Vec<Measurement>,
    pub probes: Vec<ProbeRecord>,
    /// Flow records at the sources for the boundary demand.
    pub boundary: Vec<LoopRecord>,
    pub penetration_rate: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    pub assimilations: usize,
    pub measurements_used: usize,
    pub outliers: usize,
    pub resamples: usize,
    pub degenerate: usize,
    pub probes: MatchStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeldOut {
    pub link: LinkId,
    pub mape: Option<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub label: String,
    pub mode: Mode,
    pub penetration_rate: f64,
    pub seeds: Seeds,
    pub particles: usize,
    pub estimate: Grid,
    pub mape: Option<Mape>,
    pub held_out: Vec<HeldOut>,
    pub stats: RunStats,
    pub elapsed: Duration,
}

/// Label of a run in file names and reports.
pub fn run_label(mode: Mode, pr: f64) -> String {
    if mode.uses_probes() {
        format!("{}_pr{:.2}", mode.name(), pr)
    } else {
        mode.name().to_string()
    }
}

fn initial_ensemble(
    scn: &Scenario,
    base: &DensityState,
    seed: u64,
) -> Result<Ensemble, HarnessError> {
    let frac = scn.cfg.init.noise_frac;
    let net = &scn.net;
    Ensemble::init(scn.cfg.particles, |p| {
        let mut rng = stream(seed, Domain::Initial, p as u64, 0);
        let mut x = base.clone();
        for link in net.links() {
            if let Some(fd) = &link.fd {
                let z: f64 = rng.sample(StandardNormal);
                x.rho[link.id] =
                    (base.rho[link.id] * (1.0 + frac * z)).clamp(0.0, fd.jam_density());
            }
        }
        Ok::<_, std::convert::Infallible>(x)
    })
    .map_err(|e| match e {
        SmcError::NoParticles => HarnessError::Config("particles must be at least 1".into()),
        other => HarnessError::Config(other.to_string()),
    })
}

/// Measurements the mode may assimilate, held-out detectors removed.
pub fn select_measurements(
    scn: &Scenario,
    mode: Mode,
    obs: &Observations,
) -> (Vec<Measurement>, MatchStats) {
    let mut selected = Vec::new();
    if mode.uses_loops() {
        selected.extend(
            obs.loops
                .iter()
                .filter(|m| !scn.cfg.held_out.contains(&m.link))
                .cloned(),
        );
    }
    let (probes, stats) = probe_measurements(&obs.probes, &scn.geometry);
    if mode.uses_probes() {
        selected.extend(probes);
    }
    (selected, stats)
}

/// Runs the filter in `mode` over the horizon and records the empirical
/// mean of the mainline densities after every step. MAPE is reported when
/// a reference grid is given.
pub fn run_filter(
    scn: &Scenario,
    mode: Mode,
    obs: &Observations,
    reference: Option<&Grid>,
) -> Result<RunReport, HarnessError> {
    let started = Instant::now();
    let cfg = &scn.cfg;
    let net = &scn.net;
    let dt = net.dt();
    let steps = cfg.steps();

    let provider: Box<dyn DemandProvider> = match cfg.boundary {
        BoundarySource::Profile => Box::new(scn.profile.clone()),
        BoundarySource::Loops => Box::new(boundary_series(
            &obs.boundary,
            net,
            cfg.horizon_s,
            BIN_SECONDS,
        )?),
    };
    let base = warm_start(net, provider.as_ref(), cfg.init.warmup_s)?;
    let mut ensemble = initial_ensemble(scn, &base, cfg.seeds.filter)?;
    let streams = FilterStreams {
        seed: cfg.seeds.filter,
    };

    let (selected, probe_stats) = select_measurements(scn, mode, obs);
    let batches: HashMap<usize, Vec<Measurement>> = bin_measurements(selected, BIN_SECONDS, dt)
        .into_iter()
        .map(|b| (b.step, b.measurements))
        .collect();

    let mut stats = RunStats {
        probes: probe_stats,
        ..RunStats::default()
    };
    let mut estimate = Grid::zeros(net.mainline().to_vec(), dt, steps);
    let mut nominal = vec![0.0; net.sources().len()];
    for n in 0..steps {
        provider.demands(n, dt, &mut nominal);
        predict(&mut ensemble, net, &nominal, &scn.noise, streams)?;
        if let Some(batch) = batches.get(&(n + 1)) {
            let a = match mode {
                Mode::LoopsOnly => {
                    assimilate_density(&mut ensemble, batch, net, &cfg.likelihood, streams)?
                }
                _ => assimilate_fused(&mut ensemble, batch, net, &cfg.likelihood, streams)?,
            };
            stats.assimilations += 1;
            stats.measurements_used += a.used;
            stats.outliers += a.rejected;
            stats.resamples += a.resampled as usize;
            if a.reweigh == Some(Reweigh::Degenerate) {
                stats.degenerate += 1;
            }
        }
        estimate.set_column(n, &ensemble.empirical_mean().rho);
    }

    let mape = match reference {
        Some(r) => Some(compute_mape(
            &estimate,
            r,
            &critical_densities(r, net),
            cfg.mape_floor,
        )?),
        None => None,
    };
    let held_out = held_out_errors(&estimate, &obs.loops, &cfg.held_out, cfg.mape_floor);
    Ok(RunReport {
        label: run_label(mode, obs.penetration_rate),
        mode,
        penetration_rate: obs.penetration_rate,
        seeds: cfg.seeds,
        particles: cfg.particles,
        estimate,
        mape,
        held_out,
        stats,
        elapsed: started.elapsed(),
    })
}

/// Per held-out detector, MAPE of the estimate against that detector's
/// readings (readings below `floor` skipped).
pub fn held_out_errors(
    estimate: &Grid,
    readings: &[Measurement],
    held_out: &[LinkId],
    floor: f64,
) -> Vec<HeldOut> {
    held_out
        .iter()
        .map(|&link| {
            let row = estimate.row_of(link);
            let (mut sum, mut samples) = (0.0, 0usize);
            for m in readings
                .iter()
                .filter(|m| m.link == link && m.value >= floor)
            {
                if let (Some(r), Some(c)) = (row, estimate.column_at(m.time_s)) {
                    sum += (estimate.get(r, c) - m.value).abs() / m.value;
                    samples += 1;
                }
            }
            HeldOut {
                link,
                mape: (samples > 0).then(|| sum / samples as f64),
                samples,
            }
        })
        .collect()
}

//! Synthetic ground truth and simulated loop, boundary and probe records.

use rand::Rng;
use rand_distr::StandardNormal;

use super::metrics::Grid;
use super::scenario::Scenario;
use super::HarnessError;
use crate::ctm::{
    link_velocity, step_deterministic, step_stochastic_with_flows, BoundaryFlows, DensityState,
};
use crate::data::{bin_index, DemandProvider, Geometry, LoopRecord, ProbeRecord, BIN_SECONDS};
use crate::fusion::Measurement;
use crate::network::{LinkId, Network};
use crate::rng::{stream, Domain};

/// Offset separating boundary-loop streams from detector streams.
const BOUNDARY_STREAM: u64 = 1 << 32;

/// State after `warmup_s` of deterministic simulation from an empty
/// corridor at the first step's demand and nominal splits.
pub fn warm_start(
    net: &Network,
    provider: &dyn DemandProvider,
    warmup_s: f64,
) -> Result<DensityState, HarnessError> {
    let mut demands = vec![0.0; net.sources().len()];
    provider.demands(0, net.dt(), &mut demands);
    let splits: Vec<f64> = net
        .diverges()
        .iter()
        .map(|&d| net.nodes()[d].beta.unwrap_or(0.0))
        .collect();
    let mut state = DensityState::empty(net);
    for _ in 0..(warmup_s / net.dt()).round() as usize {
        state = step_deterministic(net, &state, &demands, &splits)?;
    }
    Ok(state)
}

/// One stochastic rollout: `states[n - 1]` is the state at time `n·dt` and
/// `flows[n]` the boundary flows of the transition out of state `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub initial: DensityState,
    pub states: Vec<DensityState>,
    pub flows: Vec<BoundaryFlows>,
}

impl Truth {
    /// State at time `n·dt`.
    pub fn state(&self, n: usize) -> &DensityState {
        if n == 0 {
            &self.initial
        } else {
            &self.states[n - 1]
        }
    }

    pub fn grid(&self, net: &Network) -> Grid {
        let mut g = Grid::zeros(net.mainline().to_vec(), net.dt(), self.states.len());
        for (c, s) in self.states.iter().enumerate() {
            g.set_column(c, &s.rho);
        }
        g
    }
}

/// Runs the stochastic model over the horizon with the scenario's nominal
/// demand. Transition `n` uses the stream of particle 0 at step `n`, so a
/// one-particle open-loop filter with the same seed and start replays it.
pub fn generate_truth(scn: &Scenario, seed: u64) -> Result<Truth, HarnessError> {
    let net = &scn.net;
    let initial = warm_start(net, &scn.profile, scn.cfg.init.warmup_s)?;
    let steps = scn.cfg.steps();
    let mut nominal = vec![0.0; net.sources().len()];
    let mut states = Vec::with_capacity(steps);
    let mut flows = Vec::with_capacity(steps);
    let mut state = initial.clone();
    for n in 0..steps {
        scn.profile.demands(n, net.dt(), &mut nominal);
        let mut rng = stream(seed, Domain::Transition, 0, n as u64);
        let (next, f) = step_stochastic_with_flows(net, &state, &nominal, &scn.noise, &mut rng)?;
        states.push(next.clone());
        flows.push(f);
        state = next;
    }
    Ok(Truth {
        initial,
        states,
        flows,
    })
}

fn perturb<R: Rng>(value: f64, frac: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (value + frac * value * z).max(0.0)
}

/// Step whose state is sampled for bin `k`: the bin's final timestep.
fn reference_step(bin: usize, dt: f64) -> usize {
    ((bin + 1) as f64 * BIN_SECONDS / dt).round() as usize - 1
}

fn bins(truth: &Truth, dt: f64) -> usize {
    (truth.states.len() as f64 * dt / BIN_SECONDS).floor() as usize
}

/// One noisy density reading per detector per bin, taken from the truth at
/// the bin's final timestep.
pub fn simulate_loop_measurements(
    truth: &Truth,
    dt: f64,
    detectors: &[LinkId],
    noise_frac: f64,
    seed: u64,
) -> Vec<Measurement> {
    let mut out = Vec::new();
    for k in 0..bins(truth, dt) {
        let n = reference_step(k, dt);
        for (j, &link) in detectors.iter().enumerate() {
            let mut rng = stream(seed, Domain::LoopMeasurement, k as u64, j as u64);
            let value = perturb(truth.state(n).rho[link], noise_frac, &mut rng);
            let mut m = Measurement::density(link, value, n as f64 * dt);
            m.device = Some(format!("d{link}"));
            out.push(m);
        }
    }
    out
}

/// Loop-file records of simulated density readings.
pub fn loop_records(readings: &[Measurement]) -> Vec<LoopRecord> {
    readings
        .iter()
        .map(|m| LoopRecord {
            time_s: m.time_s.round() as u64,
            detector: m.device.clone().unwrap_or_else(|| format!("d{}", m.link)),
            link: m.link,
            density: Some(m.value),
            flow: None,
            speed: None,
            healthy: true,
            line: 0,
        })
        .collect()
}

/// Per bin and source, the noisy mean flow released into the source's
/// entry link, stamped at the bin start.
pub fn simulate_boundary_records(
    truth: &Truth,
    net: &Network,
    noise_frac: f64,
    seed: u64,
) -> Vec<LoopRecord> {
    let dt = net.dt();
    let nbins = (truth.flows.len() as f64 * dt / BIN_SECONDS).ceil() as usize;
    let sources = net.sources().len();
    let mut sum = vec![vec![0.0; sources]; nbins];
    let mut count = vec![0usize; nbins];
    for (n, f) in truth.flows.iter().enumerate() {
        let k = bin_index(n as f64 * dt, BIN_SECONDS);
        for (s, q) in sum[k].iter_mut().zip(&f.release) {
            *s += q;
        }
        count[k] += 1;
    }
    let mut out = Vec::new();
    for k in 0..nbins {
        let end = ((k + 1) * BIN_SECONDS as usize).min((truth.flows.len() as f64 * dt) as usize);
        let n_end = (end as f64 / dt).round() as usize;
        for (slot, &source) in net.sources().iter().enumerate() {
            let entry = net.source_entry(source);
            let mut rng = stream(
                seed,
                Domain::LoopMeasurement,
                k as u64,
                BOUNDARY_STREAM + slot as u64,
            );
            let flow = perturb(sum[k][slot] / count[k] as f64, noise_frac, &mut rng);
            let fd = net.fd(entry).expect("source entries carry density");
            out.push(LoopRecord {
                time_s: (k as f64 * BIN_SECONDS) as u64,
                detector: format!("b{entry}"),
                link: entry,
                density: None,
                flow: Some(flow),
                speed: Some(link_velocity(fd, truth.state(n_end).rho[entry])),
                healthy: true,
                line: 0,
            });
        }
    }
    out
}

/// Probe draws per bin at penetration rate `pr`.
pub fn probes_per_bin(pr: f64) -> usize {
    (pr * 100.0 + 1e-9).floor() as usize
}

/// Per bin, `floor(pr·100)` probe reports drawn with replacement over
/// mainline links with probability proportional to vehicles on the link at
/// the bin's final timestep. Each reports the link's truth velocity with
/// multiplicative Gaussian noise at a point inside the link's box. Draw `i`
/// of a bin is the same at every rate that includes it.
pub fn simulate_probe_measurements(
    truth: &Truth,
    net: &Network,
    geometry: &Geometry,
    pr: f64,
    noise_frac: f64,
    seed: u64,
) -> Vec<ProbeRecord> {
    let dt = net.dt();
    let draws = probes_per_bin(pr);
    let mut out = Vec::new();
    for k in 0..bins(truth, dt) {
        let n = reference_step(k, dt);
        let state = truth.state(n);
        let weights: Vec<f64> = net
            .mainline()
            .iter()
            .map(|&l| state.rho[l] * net.link(l).length)
            .collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            continue;
        }
        for i in 0..draws {
            let mut rng = stream(seed, Domain::ProbeMeasurement, k as u64, i as u64);
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = weights.len() - 1;
            for (j, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = j;
                    break;
                }
            }
            let link = net.mainline()[pick];
            let fd = net.fd(link).expect("mainline links carry density");
            let speed = perturb(link_velocity(fd, state.rho[link]), noise_frac, &mut rng);
            let b = geometry.boxes()[pick];
            let along: f64 = 0.01 + 0.98 * rng.random::<f64>();
            out.push(ProbeRecord {
                time_s: (n as f64 * dt) as u64,
                device: format!("p{k}-{i}"),
                x: Some(b.x_min + along * (b.x_max - b.x_min)),
                y: Some(0.5 * (b.y_min + b.y_max)),
                link: None,
                speed,
                heading: b.bearing_deg,
            });
        }
    }
    out
}

//! Cell Transmission Model dynamics.
//!
//! One explicit step resolves every node from the sending (demand) and
//! receiving (supply) functions of its links, then applies the conservation
//! update `ρ' = ρ + (dt/L)·(q_in − q_out)` to each cell. Source links are
//! infinite-storage queues that release `min(backlog + demand, supply)`.
//!
//! Junction closures:
//! - merge: demand-proportional rationing of the downstream supply between
//!   the mainline and the onramp;
//! - diverge: first-in-first-out `q = min(S, R_main/(1−β))` with the
//!   offramp taking `β·q` and never restricting the flow.
//!
//! The stochastic step perturbs boundary demands with multiplicative
//! Gaussian noise and draws each diverge's split ratio from a beta
//! distribution, then applies the deterministic step.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{FundamentalDiagram, LinkId, LinkKind, Network, Node, NodeKind};

/// Slack for round-off when checking state bounds after an update.
pub const BOUND_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtmError {
    #[error("node {node}: split ratio {beta} outside [0, 1]")]
    SplitRatio { node: usize, beta: f64 },
    #[error("link {link}: density {rho} outside [0, {jam}] after update")]
    DensityBounds { link: LinkId, rho: f64, jam: f64 },
    #[error("link {link}: negative queue {queue} after update")]
    NegativeQueue { link: LinkId, queue: f64 },
    #[error("expected {expected} {what}, found {found}")]
    InputLength {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid noise configuration: {0}")]
    Noise(String),
}

/// Per-link densities (veh/m) plus source-queue contents (veh), both indexed
/// by link id. Entries that do not apply to a link's kind stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    pub rho: Vec<f64>,
    pub queue: Vec<f64>,
}

impl DensityState {
    pub fn empty(net: &Network) -> Self {
        let n = net.links().len();
        Self {
            rho: vec![0.0; n],
            queue: vec![0.0; n],
        }
    }

    /// Vehicles stored in cells and source queues.
    pub fn total_vehicles(&self, net: &Network) -> f64 {
        net.links()
            .iter()
            .map(|l| match l.kind {
                k if k.carries_density() => self.rho[l.id] * l.length,
                LinkKind::Source => self.queue[l.id],
                _ => 0.0,
            })
            .sum()
    }

    pub fn mainline_densities(&self, net: &Network) -> Vec<f64> {
        net.mainline().iter().map(|&l| self.rho[l]).collect()
    }

    pub fn check(&self, net: &Network) -> Result<(), CtmError> {
        let n = net.links().len();
        for (what, v) in [("densities", &self.rho), ("queues", &self.queue)] {
            if v.len() != n {
                return Err(CtmError::InputLength {
                    what,
                    expected: n,
                    found: v.len(),
                });
            }
        }
        for link in net.links() {
            if let Some(fd) = &link.fd {
                let rho = self.rho[link.id];
                if !(rho >= 0.0 && rho <= fd.jam_density()) {
                    return Err(CtmError::DensityBounds {
                        link: link.id,
                        rho,
                        jam: fd.jam_density(),
                    });
                }
            }
            let queue = self.queue[link.id];
            if !(queue >= 0.0) {
                return Err(CtmError::NegativeQueue {
                    link: link.id,
                    queue,
                });
            }
        }
        Ok(())
    }
}

/// Demand side of the triangular diagram, capped at capacity.
pub fn sending(fd: &FundamentalDiagram, rho: f64) -> f64 {
    (fd.free_speed() * rho).min(fd.capacity())
}

/// Supply side of the triangular diagram, capped at capacity.
pub fn receiving(fd: &FundamentalDiagram, rho: f64) -> f64 {
    fd.capacity()
        .min(fd.wave_speed() * (fd.jam_density() - rho))
}

/// Space-mean speed `q(ρ)/ρ`. Exactly `v_f` on the free-flow branch,
/// including `ρ = 0` where the ratio is taken as its limit.
pub fn link_velocity(fd: &FundamentalDiagram, rho: f64) -> f64 {
    if rho <= fd.critical_density() {
        return fd.free_speed();
    }
    let v = receiving(fd, rho).min(sending(fd, rho)) / rho;
    v.clamp(0.0, fd.free_speed())
}

/// Flows resolved at one node for one step (veh/s). Slot `i` of `inflow`
/// leaves `node.upstream[i]`; slot `j` of `outflow` enters
/// `node.downstream[j]`. Unused slots are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NodeFlows {
    pub sending: [f64; 2],
    pub receiving: [f64; 2],
    pub inflow: [f64; 2],
    pub outflow: [f64; 2],
}

/// Resolves the flows through `node` given the sending function of each
/// upstream link and the receiving function of each downstream link.
/// `beta` is the realized split ratio, required for diverges.
pub fn resolve_node(
    node: &Node,
    sending: &[f64],
    receiving: &[f64],
    beta: Option<f64>,
) -> Result<NodeFlows, CtmError> {
    let mut f = NodeFlows::default();
    f.sending[..sending.len()].copy_from_slice(sending);
    f.receiving[..receiving.len()].copy_from_slice(receiving);
    match node.kind {
        NodeKind::Simple => {
            let q = sending[0].min(receiving[0]);
            f.inflow[0] = q;
            f.outflow[0] = q;
        }
        NodeKind::Merge => {
            let total = sending[0] + sending[1];
            let (q_main, q_ramp) = if total <= receiving[0] {
                (sending[0], sending[1])
            } else {
                (
                    receiving[0] * sending[0] / total,
                    receiving[0] * sending[1] / total,
                )
            };
            f.inflow = [q_main, q_ramp];
            f.outflow[0] = q_main + q_ramp;
        }
        NodeKind::Diverge => {
            let beta = beta.or(node.beta).unwrap_or(0.0);
            if !(0.0..=1.0).contains(&beta) {
                return Err(CtmError::SplitRatio {
                    node: node.id,
                    beta,
                });
            }
            let q = if beta >= 1.0 {
                sending[0]
            } else {
                sending[0].min(receiving[0] / (1.0 - beta))
            };
            f.inflow[0] = q;
            f.outflow = [(1.0 - beta) * q, beta * q];
        }
    }
    Ok(f)
}

/// Boundary totals for one step, used for vehicle accounting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryFlows {
    /// Demand added to each source queue (veh/s), in `Network::sources` order.
    pub demand: Vec<f64>,
    /// Flow released by each source into its entry link (veh/s).
    pub release: Vec<f64>,
    pub offramp_outflow: f64,
    pub sink_outflow: f64,
}

impl BoundaryFlows {
    /// Net change in stored vehicles implied by the boundary flows.
    pub fn net_vehicles(&self, dt: f64) -> f64 {
        (self.demand.iter().sum::<f64>() - self.offramp_outflow - self.sink_outflow) * dt
    }
}

fn link_sending(net: &Network, state: &DensityState, link: LinkId, demands: &[f64]) -> f64 {
    let l = net.link(link);
    match l.kind {
        LinkKind::Source => {
            let slot = net.source_slot(link).expect("source has a slot");
            state.queue[link] / net.dt() + demands[slot]
        }
        _ => match &l.fd {
            Some(fd) => sending(fd, state.rho[link]),
            None => 0.0,
        },
    }
}

fn link_receiving(net: &Network, state: &DensityState, link: LinkId) -> f64 {
    let l = net.link(link);
    if l.kind.is_absorbing() {
        return f64::INFINITY;
    }
    match &l.fd {
        Some(fd) => receiving(fd, state.rho[link]),
        None => 0.0,
    }
}

fn check_inputs(net: &Network, demands: &[f64], splits: &[f64]) -> Result<(), CtmError> {
    if demands.len() != net.sources().len() {
        return Err(CtmError::InputLength {
            what: "boundary demands",
            expected: net.sources().len(),
            found: demands.len(),
        });
    }
    if splits.len() != net.diverges().len() {
        return Err(CtmError::InputLength {
            what: "split ratios",
            expected: net.diverges().len(),
            found: splits.len(),
        });
    }
    Ok(())
}

/// Resolves every node of the network for the current state.
pub fn node_flows(
    net: &Network,
    state: &DensityState,
    demands: &[f64],
    splits: &[f64],
) -> Result<Vec<NodeFlows>, CtmError> {
    check_inputs(net, demands, splits)?;
    let mut flows = Vec::with_capacity(net.nodes().len());
    for node in net.nodes() {
        let mut s = [0.0; 2];
        let mut r = [0.0; 2];
        for (i, &l) in node.upstream.iter().enumerate() {
            s[i] = link_sending(net, state, l, demands);
        }
        for (j, &l) in node.downstream.iter().enumerate() {
            r[j] = link_receiving(net, state, l);
        }
        let beta = net.diverge_slot(node.id).map(|k| splits[k]);
        flows.push(resolve_node(
            node,
            &s[..node.upstream.len()],
            &r[..node.downstream.len()],
            beta,
        )?);
    }
    Ok(flows)
}

/// One deterministic step, also reporting boundary flows.
pub fn step_with_flows(
    net: &Network,
    state: &DensityState,
    demands: &[f64],
    splits: &[f64],
) -> Result<(DensityState, BoundaryFlows), CtmError> {
    let flows = node_flows(net, state, demands, splits)?;
    let dt = net.dt();
    let mut next = state.clone();
    let mut boundary = BoundaryFlows {
        demand: demands.to_vec(),
        release: vec![0.0; demands.len()],
        ..Default::default()
    };

    for link in net.links() {
        let q_in = net
            .fed_by(link.id)
            .map(|(node, slot)| flows[node].outflow[slot])
            .unwrap_or(0.0);
        let q_out = net
            .drained_by(link.id)
            .map(|(node, slot)| flows[node].inflow[slot])
            .unwrap_or(0.0);
        match link.kind {
            LinkKind::Mainline | LinkKind::Onramp => {
                let fd = link.fd.as_ref().expect("density link has a diagram");
                let rho = state.rho[link.id] + dt / link.length * (q_in - q_out);
                let jam = fd.jam_density();
                if rho < -BOUND_TOLERANCE || rho > jam + BOUND_TOLERANCE || rho.is_nan() {
                    return Err(CtmError::DensityBounds {
                        link: link.id,
                        rho,
                        jam,
                    });
                }
                next.rho[link.id] = rho.clamp(0.0, jam);
            }
            LinkKind::Source => {
                let slot = net.source_slot(link.id).expect("source has a slot");
                let queue = state.queue[link.id] + (demands[slot] - q_out) * dt;
                let scale = 1.0 + state.queue[link.id] + demands[slot] * dt;
                if queue < -BOUND_TOLERANCE * scale || queue.is_nan() {
                    return Err(CtmError::NegativeQueue {
                        link: link.id,
                        queue,
                    });
                }
                next.queue[link.id] = queue.max(0.0);
                boundary.release[slot] = q_out;
            }
            LinkKind::Offramp => boundary.offramp_outflow += q_in,
            LinkKind::Sink => boundary.sink_outflow += q_in,
        }
    }
    Ok((next, boundary))
}

/// One deterministic CTM step with the given boundary demands (one per
/// source, veh/s) and realized split ratios (one per diverge).
pub fn step_deterministic(
    net: &Network,
    state: &DensityState,
    demands: &[f64],
    splits: &[f64],
) -> Result<DensityState, CtmError> {
    step_with_flows(net, state, demands, splits).map(|(s, _)| s)
}

/// Beta-distribution shape pair for one offramp's split ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitShape {
    pub offramp: LinkId,
    pub alpha: f64,
    pub beta: f64,
}

/// Process-noise parameters of the stochastic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Standard deviation of onramp demand noise as a fraction of the
    /// nominal demand.
    pub onramp_flow_sigma_frac: f64,
    /// Same for the source feeding the first mainline link.
    pub mainline_flow_sigma_frac: f64,
    /// Concentration `α + β` of the split-ratio beta distributions, whose
    /// mean is each offramp's nominal split. `None` makes splits fixed.
    pub split_concentration: Option<f64>,
    /// Explicit shapes overriding the concentration for given offramps.
    pub split_beta_params: Vec<SplitShape>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            onramp_flow_sigma_frac: 0.15,
            mainline_flow_sigma_frac: 0.0,
            split_concentration: Some(50.0),
            split_beta_params: Vec::new(),
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            onramp_flow_sigma_frac: 0.0,
            mainline_flow_sigma_frac: 0.0,
            split_concentration: None,
            split_beta_params: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
enum SplitDistribution {
    Fixed(f64),
    Beta(Beta<f64>),
}

/// [`NoiseConfig`] resolved against a network: one split distribution per
/// diverge, in `Network::diverges` order.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    /// Per source, in `Network::sources` order.
    demand_sigma_frac: Vec<f64>,
    splits: Vec<SplitDistribution>,
}

impl NoiseModel {
    pub fn new(net: &Network, cfg: &NoiseConfig) -> Result<Self, CtmError> {
        for (what, frac) in [
            ("onramp_flow_sigma_frac", cfg.onramp_flow_sigma_frac),
            ("mainline_flow_sigma_frac", cfg.mainline_flow_sigma_frac),
        ] {
            if !(frac >= 0.0 && frac.is_finite()) {
                return Err(CtmError::Noise(format!("{what} must be >= 0, got {frac}")));
            }
        }
        let demand_sigma_frac = net
            .sources()
            .iter()
            .map(|&s| match net.link(net.source_entry(s)).kind {
                LinkKind::Onramp => cfg.onramp_flow_sigma_frac,
                _ => cfg.mainline_flow_sigma_frac,
            })
            .collect();
        if let Some(k) = cfg.split_concentration {
            if !(k > 0.0 && k.is_finite()) {
                return Err(CtmError::Noise(format!(
                    "split_concentration must be positive, got {k}"
                )));
            }
        }
        let mut splits = Vec::with_capacity(net.diverges().len());
        for &d in net.diverges() {
            let node = &net.nodes()[d];
            let offramp = node.downstream[1];
            let nominal = node.beta.unwrap_or(0.0);
            let shape = cfg.split_beta_params.iter().find(|s| s.offramp == offramp);
            let dist = match (shape, cfg.split_concentration) {
                (Some(s), _) => {
                    let b = Beta::new(s.alpha, s.beta).map_err(|e| {
                        CtmError::Noise(format!("offramp {offramp}: beta shapes: {e}"))
                    })?;
                    SplitDistribution::Beta(b)
                }
                (None, Some(k)) if nominal > 0.0 && nominal < 1.0 => {
                    let b = Beta::new(k * nominal, k * (1.0 - nominal)).map_err(|e| {
                        CtmError::Noise(format!("offramp {offramp}: beta shapes: {e}"))
                    })?;
                    SplitDistribution::Beta(b)
                }
                _ => SplitDistribution::Fixed(nominal),
            };
            splits.push(dist);
        }
        for s in &cfg.split_beta_params {
            if !net
                .diverges()
                .iter()
                .any(|&d| net.nodes()[d].downstream[1] == s.offramp)
            {
                return Err(CtmError::Noise(format!(
                    "split shape given for {} which is not an offramp",
                    s.offramp
                )));
            }
        }
        Ok(Self {
            demand_sigma_frac,
            splits,
        })
    }

    /// Draws noisy demands and split ratios for one step.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        nominal: &[f64],
        rng: &mut R,
        demands: &mut Vec<f64>,
        splits: &mut Vec<f64>,
    ) {
        demands.clear();
        for (&d, &frac) in nominal.iter().zip(&self.demand_sigma_frac) {
            let z: f64 = rng.sample(StandardNormal);
            demands.push((d + frac * d * z).max(0.0));
        }
        splits.clear();
        for dist in &self.splits {
            splits.push(match dist {
                SplitDistribution::Fixed(b) => *b,
                SplitDistribution::Beta(b) => b.sample(rng),
            });
        }
    }
}

/// One draw from the stochastic transition kernel.
pub fn step_stochastic<R: Rng + ?Sized>(
    net: &Network,
    state: &DensityState,
    nominal_demands: &[f64],
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<DensityState, CtmError> {
    step_stochastic_with_flows(net, state, nominal_demands, noise, rng).map(|(s, _)| s)
}

pub fn step_stochastic_with_flows<R: Rng + ?Sized>(
    net: &Network,
    state: &DensityState,
    nominal_demands: &[f64],
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<(DensityState, BoundaryFlows), CtmError> {
    let mut demands = Vec::with_capacity(nominal_demands.len());
    let mut splits = Vec::with_capacity(net.diverges().len());
    noise.sample(nominal_demands, rng, &mut demands, &mut splits);
    step_with_flows(net, state, &demands, &splits)
}

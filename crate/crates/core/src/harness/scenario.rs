//! Resolved scenarios and the built-in reference corridor.

use super::config::ScenarioConfig;
use super::HarnessError;
use crate::ctm::NoiseModel;
use crate::data::{DemandProfile, Geometry, LinkGeometry};
use crate::network::{build_network, CorridorSpec, LinkId, LinkKind, Network};

/// Three-lane and two-lane diagrams of the reference corridor.
const FD_3LANE: (f64, f64, f64) = (30.0, 6.0, 0.36);
const FD_2LANE: (f64, f64, f64) = (30.0, 6.0, 0.24);
const FD_RAMP: (f64, f64, f64) = (30.0, 6.0, 0.12);

const MAINLINE_LINKS: usize = 40;
const LINK_LENGTH: f64 = 200.0;
/// First link after the lane drop.
const LANE_DROP: LinkId = 30;
const ONRAMPS: [LinkId; 4] = [4, 12, 20, 27];
const OFFRAMPS: [(LinkId, f64); 3] = [(8, 0.08), (16, 0.08), (24, 0.08)];

/// Width of the corridor's probe-matching boxes (m).
const BOX_WIDTH: f64 = 20.0;

/// Forty 200 m links with a three-to-two lane drop near the downstream end,
/// four onramps and three offramps.
pub fn reference_corridor() -> CorridorSpec {
    let mut spec = CorridorSpec::uniform_mainline(MAINLINE_LINKS, LINK_LENGTH, FD_3LANE);
    for link in &mut spec.links[LANE_DROP..] {
        link.fd = Some(FD_2LANE);
    }
    for attach in ONRAMPS {
        spec.push_onramp(attach, LINK_LENGTH, FD_RAMP);
    }
    for (attach, beta) in OFFRAMPS {
        spec.push_offramp(attach, LINK_LENGTH, beta);
    }
    spec
}

/// Trapezoidal peak: 0 before `t0`, rising to 1 at `t1`, holding to `t2`,
/// falling to 0 at `t3`.
fn trapezoid(t: f64, t0: f64, t1: f64, t2: f64, t3: f64) -> f64 {
    if t <= t0 || t >= t3 {
        0.0
    } else if t < t1 {
        (t - t0) / (t1 - t0)
    } else if t <= t2 {
        1.0
    } else {
        (t3 - t) / (t3 - t2)
    }
}

/// Base-to-peak levels (veh/s) of the mainline source and of each onramp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakDemand {
    pub mainline: (f64, f64),
    pub onramp: (f64, f64),
}

pub const REFERENCE_PEAK: PeakDemand = PeakDemand {
    mainline: (0.5, 0.8),
    onramp: (0.1, 0.28),
};

/// Afternoon-peak demand over two hours in one-minute steps: base level,
/// a ramp up from 15 to 40 min, a plateau to 70 min and a ramp down to
/// 100 min.
pub fn peak_demand(net: &Network, levels: PeakDemand) -> DemandProfile {
    let step = 60.0;
    let horizon = 7200.0;
    let breakpoints = net
        .sources()
        .iter()
        .map(|&s| {
            let (base, peak) = match net.link(net.source_entry(s)).kind {
                LinkKind::Onramp => levels.onramp,
                _ => levels.mainline,
            };
            (0..(horizon / step) as usize)
                .map(|i| {
                    let t = i as f64 * step;
                    let s = trapezoid(t + 0.5 * step, 900.0, 2400.0, 4200.0, 6000.0);
                    (t, base + (peak - base) * s)
                })
                .collect()
        })
        .collect();
    DemandProfile::new(breakpoints)
}

/// Reference demand; the peak pushes the lane drop past capacity.
pub fn reference_demand(net: &Network) -> DemandProfile {
    peak_demand(net, REFERENCE_PEAK)
}

/// Every fifth mainline link, starting at the third.
pub fn reference_detectors(net: &Network) -> Vec<LinkId> {
    net.mainline().iter().copied().skip(2).step_by(5).collect()
}

/// Bounding boxes laying the mainline out eastbound along the x axis.
pub fn mainline_geometry(net: &Network) -> Geometry {
    let mut x = 0.0;
    let boxes = net
        .mainline()
        .iter()
        .map(|&l| {
            let length = net.link(l).length;
            let g = LinkGeometry {
                link: l,
                x_min: x,
                x_max: x + length,
                y_min: 0.0,
                y_max: BOX_WIDTH,
                bearing_deg: 90.0,
            };
            x += length;
            g
        })
        .collect();
    Geometry::new(boxes).expect("consecutive boxes only share edges")
}

/// A configuration resolved against its corridor and demand.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub spec: CorridorSpec,
    pub net: Network,
    pub profile: DemandProfile,
    pub noise: NoiseModel,
    pub detectors: Vec<LinkId>,
    pub geometry: Geometry,
}

impl Scenario {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let spec = match &cfg.corridor {
            Some(path) => CorridorSpec::from_path(path)?,
            None => reference_corridor(),
        };
        let net = build_network(&spec, cfg.dt_s)?;
        let profile = match &cfg.demand {
            Some(path) => DemandProfile::from_path(path, &net)?,
            None => reference_demand(&net),
        };
        let noise = NoiseModel::new(&net, &cfg.noise)?;
        let detectors = match &cfg.detectors {
            Some(d) => d.clone(),
            None => reference_detectors(&net),
        };
        for &d in detectors.iter().chain(&cfg.held_out) {
            if d >= net.links().len() || net.link(d).kind != LinkKind::Mainline {
                return Err(HarnessError::Config(format!(
                    "detector link {d} is not a mainline link"
                )));
            }
        }
        if let Some(h) = cfg.held_out.iter().find(|h| !detectors.contains(h)) {
            return Err(HarnessError::Config(format!(
                "held-out detector {h} is not among the placed detectors"
            )));
        }
        let geometry = mainline_geometry(&net);
        Ok(Self {
            cfg,
            spec,
            net,
            profile,
            noise,
            detectors,
            geometry,
        })
    }

    /// The reference configuration with default settings.
    pub fn reference() -> Self {
        Self::new(ScenarioConfig::default()).expect("reference scenario is valid")
    }
}

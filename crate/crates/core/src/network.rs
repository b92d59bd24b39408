//! Freeway corridor topology and per-link fundamental diagrams.
//!
//! A corridor is a single mainline chain of links, ordered upstream to
//! downstream, with onramps merging into and offramps diverging from the
//! mainline. The builder adds the boundary links the simulation needs: one
//! source queue in front of the first mainline link, one source queue per
//! onramp, and a sink after the last mainline link.
//!
//! Units are fixed corridor-wide: density in veh/m, speed in m/s, flow in
//! veh/s, length in m and time in s.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

/// Index of a link inside a [`Network`]. Equal to the link's `id`.
pub type LinkId = usize;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{what} must be positive and finite, got {value}")]
pub struct FdError {
    pub what: &'static str,
    pub value: f64,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("link {link}: {source}")]
    Parameter {
        link: LinkId,
        #[source]
        source: FdError,
    },
    #[error("link {link}: length must be positive, got {length}")]
    Length { link: LinkId, length: f64 },
    #[error("link {link}: CFL violated, {what}·dt = {distance} m exceeds length {length} m")]
    Cfl {
        link: LinkId,
        what: &'static str,
        distance: f64,
        length: f64,
    },
    #[error("link {link}: {reason}")]
    Topology { link: LinkId, reason: String },
    #[error("timestep must be positive, got {0}")]
    Timestep(f64),
    #[error("corridor has no mainline links")]
    EmptyMainline,
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Triangular flux function `q(ρ) = min(v_f·ρ, w·(ρ_j − ρ))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalDiagram {
    free_speed: f64,
    wave_speed: f64,
    jam_density: f64,
}

impl FundamentalDiagram {
    pub fn new(free_speed: f64, wave_speed: f64, jam_density: f64) -> Result<Self, FdError> {
        for (what, value) in [
            ("free-flow speed", free_speed),
            ("congestion wave speed", wave_speed),
            ("jam density", jam_density),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(FdError { what, value });
            }
        }
        Ok(Self {
            free_speed,
            wave_speed,
            jam_density,
        })
    }

    pub fn free_speed(&self) -> f64 {
        self.free_speed
    }

    pub fn wave_speed(&self) -> f64 {
        self.wave_speed
    }

    pub fn jam_density(&self) -> f64 {
        self.jam_density
    }

    /// Density where the free-flow and congested branches intersect.
    pub fn critical_density(&self) -> f64 {
        self.wave_speed * self.jam_density / (self.free_speed + self.wave_speed)
    }

    /// Maximum flow, attained at the critical density.
    pub fn capacity(&self) -> f64 {
        self.free_speed * self.critical_density()
    }

    /// Equilibrium flow at density `rho`.
    pub fn flow(&self, rho: f64) -> f64 {
        (self.free_speed * rho).min(self.wave_speed * (self.jam_density - rho))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkKind {
    Mainline,
    Onramp,
    Offramp,
    Source,
    Sink,
}

impl LinkKind {
    /// Links whose state is a density (the CTM cells).
    pub fn carries_density(self) -> bool {
        matches!(self, LinkKind::Mainline | LinkKind::Onramp)
    }

    /// Links that absorb everything they are sent.
    pub fn is_absorbing(self) -> bool {
        matches!(self, LinkKind::Offramp | LinkKind::Sink)
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LinkKind::Mainline => "mainline",
            LinkKind::Onramp => "onramp",
            LinkKind::Offramp => "offramp",
            LinkKind::Source => "source",
            LinkKind::Sink => "sink",
        };
        f.write_str(s)
    }
}

impl FromStr for LinkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mainline" => Ok(LinkKind::Mainline),
            "onramp" => Ok(LinkKind::Onramp),
            "offramp" => Ok(LinkKind::Offramp),
            "source" => Ok(LinkKind::Source),
            "sink" => Ok(LinkKind::Sink),
            other => Err(format!("unknown link kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub length: f64,
    pub kind: LinkKind,
    /// Present for density-carrying links (mainline and onramp cells).
    pub fd: Option<FundamentalDiagram>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Simple,
    /// Upstream is `[mainline, onramp]`.
    Merge,
    /// Downstream is `[mainline or sink, offramp]`.
    Diverge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub upstream: Vec<LinkId>,
    pub downstream: Vec<LinkId>,
    pub kind: NodeKind,
    /// Nominal split ratio toward the offramp; diverge nodes only.
    pub beta: Option<f64>,
}

/// One row of a corridor description.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub id: LinkId,
    pub kind: LinkKind,
    pub length: f64,
    /// `(v_f, w, rho_j)`; required for mainline links and onramps.
    pub fd: Option<(f64, f64, f64)>,
    /// Mainline link whose downstream node hosts this ramp.
    pub attach: Option<LinkId>,
    /// Offramp split ratio.
    pub beta: Option<f64>,
}

/// Corridor description: links listed upstream to downstream with ramp
/// attachments. Ids must equal row positions (0, 1, 2, ...).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorridorSpec {
    pub links: Vec<LinkSpec>,
}

impl CorridorSpec {
    /// Uniform mainline of `count` links sharing one fundamental diagram.
    pub fn uniform_mainline(count: usize, length: f64, fd: (f64, f64, f64)) -> Self {
        let links = (0..count)
            .map(|id| LinkSpec {
                id,
                kind: LinkKind::Mainline,
                length,
                fd: Some(fd),
                attach: None,
                beta: None,
            })
            .collect();
        Self { links }
    }

    pub fn push_onramp(&mut self, attach: LinkId, length: f64, fd: (f64, f64, f64)) -> LinkId {
        let id = self.links.len();
        self.links.push(LinkSpec {
            id,
            kind: LinkKind::Onramp,
            length,
            fd: Some(fd),
            attach: Some(attach),
            beta: None,
        });
        id
    }

    pub fn push_offramp(&mut self, attach: LinkId, length: f64, beta: f64) -> LinkId {
        let id = self.links.len();
        self.links.push(LinkSpec {
            id,
            kind: LinkKind::Offramp,
            length,
            fd: None,
            attach: Some(attach),
            beta: Some(beta),
        });
        id
    }

    pub const CSV_HEADER: &'static str = "id,kind,length_m,v_f,w,rho_j,attach,beta";

    /// Parses the corridor table. `#` starts a comment line.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, NetworkError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .clone();
        let expected: Vec<&str> = Self::CSV_HEADER.split(',').collect();
        let found: Vec<&str> = headers.iter().collect();
        if found != expected {
            return Err(parse_err(
                1,
                format!(
                    "expected header '{}', found '{}'",
                    Self::CSV_HEADER,
                    found.join(",")
                ),
            ));
        }

        let mut links = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                parse_err(line, e.to_string())
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != expected.len() {
                return Err(parse_err(
                    line,
                    format!(
                        "expected {} columns, found {}",
                        expected.len(),
                        record.len()
                    ),
                ));
            }
            let field = |i: usize| record.get(i).unwrap_or("");
            let id: LinkId = parse_field(field(0), "id", line)?;
            let kind: LinkKind = field(1).parse().map_err(|e: String| parse_err(line, e))?;
            let length: f64 = parse_field(field(2), "length_m", line)?;
            let fd = match (field(3), field(4), field(5)) {
                ("", "", "") => None,
                (v, w, r) => Some((
                    parse_field(v, "v_f", line)?,
                    parse_field(w, "w", line)?,
                    parse_field(r, "rho_j", line)?,
                )),
            };
            let attach = optional_field(field(6), "attach", line)?;
            let beta = optional_field(field(7), "beta", line)?;
            links.push(LinkSpec {
                id,
                kind,
                length,
                fd,
                attach,
                beta,
            });
        }
        Ok(Self { links })
    }

    pub fn from_path(path: &Path) -> Result<Self, NetworkError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for l in &self.links {
            let (v, w, r) = match l.fd {
                Some((v, w, r)) => (v.to_string(), w.to_string(), r.to_string()),
                None => Default::default(),
            };
            let attach = l.attach.map(|a| a.to_string()).unwrap_or_default();
            let beta = l.beta.map(|b| b.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                l.id, l.kind, l.length, v, w, r, attach, beta
            ));
        }
        out
    }
}

fn parse_err(line: u64, message: impl Into<String>) -> NetworkError {
    NetworkError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_field<T: FromStr>(s: &str, name: &str, line: u64) -> Result<T, NetworkError> {
    s.parse()
        .map_err(|_| parse_err(line, format!("invalid {name} '{s}'")))
}

fn optional_field<T: FromStr>(s: &str, name: &str, line: u64) -> Result<Option<T>, NetworkError> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(s, name, line).map(Some)
    }
}

/// Validated corridor. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    links: Vec<Link>,
    nodes: Vec<Node>,
    dt: f64,
    mainline: Vec<LinkId>,
    sources: Vec<LinkId>,
    diverges: Vec<usize>,
    /// `(node, slot in node.downstream)` feeding each link.
    fed_by: Vec<Option<(usize, usize)>>,
    /// `(node, slot in node.upstream)` draining each link.
    drained_by: Vec<Option<(usize, usize)>>,
    source_slot: Vec<Option<usize>>,
    diverge_slot: Vec<Option<usize>>,
}

/// Validates a corridor description and assembles the simulation network.
pub fn build_network(spec: &CorridorSpec, dt: f64) -> Result<Network, NetworkError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(NetworkError::Timestep(dt));
    }
    let n = spec.links.len();
    let mut links = Vec::with_capacity(n + 8);
    for (pos, ls) in spec.links.iter().enumerate() {
        if ls.id != pos {
            return Err(NetworkError::Topology {
                link: ls.id,
                reason: format!("ids must be listed in order 0, 1, 2, ...; expected {pos}"),
            });
        }
        if !matches!(
            ls.kind,
            LinkKind::Mainline | LinkKind::Onramp | LinkKind::Offramp
        ) {
            return Err(NetworkError::Topology {
                link: ls.id,
                reason: format!(
                    "{} links are added automatically and may not be listed",
                    ls.kind
                ),
            });
        }
        if !(ls.length > 0.0 && ls.length.is_finite()) {
            return Err(NetworkError::Length {
                link: ls.id,
                length: ls.length,
            });
        }
        let fd = match (ls.kind, ls.fd) {
            (LinkKind::Offramp, _) => None,
            (_, Some((v, w, r))) => Some(FundamentalDiagram::new(v, w, r).map_err(|source| {
                NetworkError::Parameter {
                    link: ls.id,
                    source,
                }
            })?),
            (_, None) => {
                return Err(NetworkError::Topology {
                    link: ls.id,
                    reason: format!("{} link needs fundamental-diagram parameters", ls.kind),
                })
            }
        };
        if let Some(fd) = fd {
            for (what, speed) in [("v_f", fd.free_speed()), ("w", fd.wave_speed())] {
                let distance = speed * dt;
                if distance > ls.length {
                    return Err(NetworkError::Cfl {
                        link: ls.id,
                        what,
                        distance,
                        length: ls.length,
                    });
                }
            }
        }
        match (ls.kind, ls.attach, ls.beta) {
            (LinkKind::Mainline, None, None) => {}
            (LinkKind::Mainline, _, _) => {
                return Err(NetworkError::Topology {
                    link: ls.id,
                    reason: "mainline links take no attach or beta".into(),
                })
            }
            (_, None, _) => {
                return Err(NetworkError::Topology {
                    link: ls.id,
                    reason: "dangling ramp: no attachment".into(),
                })
            }
            (LinkKind::Onramp, Some(_), Some(_)) => {
                return Err(NetworkError::Topology {
                    link: ls.id,
                    reason: "onramps take no split ratio".into(),
                })
            }
            (LinkKind::Offramp, Some(_), None) => {
                return Err(NetworkError::Topology {
                    link: ls.id,
                    reason: "offramp needs a split ratio beta".into(),
                })
            }
            (LinkKind::Offramp, Some(_), Some(b)) if !(0.0..=1.0).contains(&b) => {
                return Err(NetworkError::Topology {
                    link: ls.id,
                    reason: format!("split ratio {b} outside [0, 1]"),
                })
            }
            _ => {}
        }
        links.push(Link {
            id: ls.id,
            length: ls.length,
            kind: ls.kind,
            fd,
        });
    }

    let mainline: Vec<LinkId> = links
        .iter()
        .filter(|l| l.kind == LinkKind::Mainline)
        .map(|l| l.id)
        .collect();
    if mainline.is_empty() {
        return Err(NetworkError::EmptyMainline);
    }
    let last_mainline = *mainline.last().unwrap();

    // Ramp hosted at the downstream node of each mainline link.
    let mut ramp_at: Vec<Option<LinkId>> = vec![None; n];
    for ls in &spec.links {
        let Some(attach) = ls.attach else { continue };
        if attach == ls.id {
            return Err(NetworkError::Topology {
                link: ls.id,
                reason: "ramp attaches to itself (cycle)".into(),
            });
        }
        if attach >= n || links[attach].kind != LinkKind::Mainline {
            return Err(NetworkError::Topology {
                link: ls.id,
                reason: format!("dangling ramp: attach {attach} is not a mainline link"),
            });
        }
        if ls.kind == LinkKind::Onramp && attach == last_mainline {
            return Err(NetworkError::Topology {
                link: ls.id,
                reason:
                    "dangling ramp: onramp after the last mainline link has nothing to merge into"
                        .into(),
            });
        }
        if let Some(other) = ramp_at[attach] {
            return Err(NetworkError::Topology {
                link: ls.id,
                reason: format!("node after mainline link {attach} already hosts ramp {other}"),
            });
        }
        ramp_at[attach] = Some(ls.id);
    }

    let mut nodes: Vec<Node> = Vec::new();
    let mut sources = Vec::new();
    let mut push_source = |links: &mut Vec<Link>, nodes: &mut Vec<Node>, feeds: LinkId| {
        let id = links.len();
        links.push(Link {
            id,
            length: 1.0,
            kind: LinkKind::Source,
            fd: None,
        });
        nodes.push(Node {
            id: nodes.len(),
            upstream: vec![id],
            downstream: vec![feeds],
            kind: NodeKind::Simple,
            beta: None,
        });
        sources.push(id);
    };

    push_source(&mut links, &mut nodes, mainline[0]);
    let sink = n
        + 1
        + spec
            .links
            .iter()
            .filter(|l| l.kind == LinkKind::Onramp)
            .count();
    let mut diverges = Vec::new();
    for (i, &m) in mainline.iter().enumerate() {
        let next = mainline.get(i + 1).copied().unwrap_or(sink);
        let node = match ramp_at[m].map(|r| (r, links[r].kind)) {
            Some((ramp, LinkKind::Onramp)) => {
                push_source(&mut links, &mut nodes, ramp);
                Node {
                    id: nodes.len(),
                    upstream: vec![m, ramp],
                    downstream: vec![next],
                    kind: NodeKind::Merge,
                    beta: None,
                }
            }
            Some((ramp, _)) => {
                diverges.push(nodes.len());
                Node {
                    id: nodes.len(),
                    upstream: vec![m],
                    downstream: vec![next, ramp],
                    kind: NodeKind::Diverge,
                    beta: spec.links[ramp].beta,
                }
            }
            None => Node {
                id: nodes.len(),
                upstream: vec![m],
                downstream: vec![next],
                kind: NodeKind::Simple,
                beta: None,
            },
        };
        nodes.push(node);
    }
    debug_assert_eq!(links.len(), sink);
    links.push(Link {
        id: sink,
        length: 1.0,
        kind: LinkKind::Sink,
        fd: None,
    });

    let mut fed_by = vec![None; links.len()];
    let mut drained_by = vec![None; links.len()];
    for node in &nodes {
        for (slot, &l) in node.upstream.iter().enumerate() {
            if drained_by[l].replace((node.id, slot)).is_some() {
                return Err(NetworkError::Topology {
                    link: l,
                    reason: "link drains into more than one node".into(),
                });
            }
        }
        for (slot, &l) in node.downstream.iter().enumerate() {
            if fed_by[l].replace((node.id, slot)).is_some() {
                return Err(NetworkError::Topology {
                    link: l,
                    reason: "link is fed by more than one node".into(),
                });
            }
        }
    }
    for link in &links {
        let needs_in = link.kind != LinkKind::Source;
        let needs_out = !link.kind.is_absorbing();
        if (needs_in && fed_by[link.id].is_none()) || (needs_out && drained_by[link.id].is_none()) {
            return Err(NetworkError::Topology {
                link: link.id,
                reason: "link is not connected to the corridor".into(),
            });
        }
    }

    let mut source_slot = vec![None; links.len()];
    for (slot, &s) in sources.iter().enumerate() {
        source_slot[s] = Some(slot);
    }
    let mut diverge_slot = vec![None; nodes.len()];
    for (slot, &d) in diverges.iter().enumerate() {
        diverge_slot[d] = Some(slot);
    }

    Ok(Network {
        links,
        nodes,
        dt,
        mainline,
        sources,
        diverges,
        fed_by,
        drained_by,
        source_slot,
        diverge_slot,
    })
}

impl Network {
    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Mainline links, upstream to downstream.
    pub fn mainline(&self) -> &[LinkId] {
        &self.mainline
    }

    /// Source links; boundary demand vectors follow this order.
    pub fn sources(&self) -> &[LinkId] {
        &self.sources
    }

    /// The link a source feeds (the first mainline link or an onramp).
    pub fn source_entry(&self, source: LinkId) -> LinkId {
        let (node, _) = self.drained_by[source].expect("source drains into a node");
        self.nodes[node].downstream[0]
    }

    /// Diverge node indices; split-ratio vectors follow this order.
    pub fn diverges(&self) -> &[usize] {
        &self.diverges
    }

    /// Position of a source link in [`Network::sources`].
    pub fn source_slot(&self, link: LinkId) -> Option<usize> {
        self.source_slot[link]
    }

    /// Position of a node in [`Network::diverges`].
    pub fn diverge_slot(&self, node: usize) -> Option<usize> {
        self.diverge_slot[node]
    }

    pub fn fed_by(&self, link: LinkId) -> Option<(usize, usize)> {
        self.fed_by[link]
    }

    pub fn drained_by(&self, link: LinkId) -> Option<(usize, usize)> {
        self.drained_by[link]
    }

    pub fn fd(&self, link: LinkId) -> Option<&FundamentalDiagram> {
        self.links[link].fd.as_ref()
    }

    /// Nodes joining two corridor links (no source or sink attached).
    pub fn internal_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|node| {
            node.upstream
                .iter()
                .chain(&node.downstream)
                .all(|&l| !matches!(self.links[l].kind, LinkKind::Source | LinkKind::Sink))
        })
    }

    pub fn count_nodes(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn count_links(&self, kind: LinkKind) -> usize {
        self.links.iter().filter(|l| l.kind == kind).count()
    }

    /// Position of a link within the mainline, if it is a mainline link.
    pub fn mainline_position(&self, link: LinkId) -> Option<usize> {
        self.mainline.iter().position(|&m| m == link)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FD: (f64, f64, f64) = (30.0, 6.0, 0.12);

    #[test]
    fn critical_density_hand_values() {
        let fd = FundamentalDiagram::new(30.0, 6.0, 0.12).unwrap();
        assert!((fd.critical_density() - 0.02).abs() < 1e-15);
        assert!((fd.capacity() - 0.6).abs() < 1e-12);

        let sym = FundamentalDiagram::new(7.0, 7.0, 0.3).unwrap();
        assert!((sym.critical_density() - 0.15).abs() < 1e-15);

        let rc = fd.critical_density();
        let free = fd.free_speed() * rc;
        let cong = fd.wave_speed() * (fd.jam_density() - rc);
        assert!((free - cong).abs() < 1e-15);
    }

    #[test]
    fn fd_rejects_non_positive() {
        assert!(FundamentalDiagram::new(0.0, 6.0, 0.12).is_err());
        assert!(FundamentalDiagram::new(30.0, -1.0, 0.12).is_err());
        assert!(FundamentalDiagram::new(30.0, 6.0, f64::NAN).is_err());
    }

    #[test]
    fn minimal_chain() {
        let spec = CorridorSpec::uniform_mainline(3, 200.0, FD);
        let net = build_network(&spec, 5.0).unwrap();
        assert_eq!(net.internal_nodes().count(), 2);
        assert!(net.internal_nodes().all(|n| n.kind == NodeKind::Simple));
        assert_eq!(net.sources().len(), 1);
        assert_eq!(net.source_entry(net.sources()[0]), 0);
        assert_eq!(net.count_links(LinkKind::Sink), 1);
    }

    #[test]
    fn cfl_violation_reports_link() {
        let spec = CorridorSpec::uniform_mainline(3, 200.0, FD);
        match build_network(&spec, 10.0) {
            Err(NetworkError::Cfl { link, distance, .. }) => {
                assert_eq!(link, 0);
                assert_eq!(distance, 300.0);
            }
            other => panic!("expected CFL error, got {other:?}"),
        }
    }

    #[test]
    fn full_scale_corridor() {
        let mut spec = CorridorSpec::uniform_mainline(127, 200.0, FD);
        for k in 0..23 {
            spec.push_onramp(2 + 5 * k, 160.0, FD);
        }
        for k in 0..21 {
            spec.push_offramp(4 + 5 * k, 100.0, 0.1);
        }
        let net = build_network(&spec, 5.0).unwrap();
        assert_eq!(net.count_nodes(NodeKind::Merge), 23);
        assert_eq!(net.count_nodes(NodeKind::Diverge), 21);
        assert_eq!(net.sources().len(), 24);
        assert_eq!(net.diverges().len(), 21);
    }

    #[test]
    fn topology_errors() {
        let mut spec = CorridorSpec::uniform_mainline(3, 200.0, FD);
        spec.push_onramp(2, 160.0, FD);
        assert!(matches!(
            build_network(&spec, 5.0),
            Err(NetworkError::Topology { link: 3, .. })
        ));

        let mut spec = CorridorSpec::uniform_mainline(3, 200.0, FD);
        spec.push_offramp(7, 100.0, 0.2);
        assert!(matches!(
            build_network(&spec, 5.0),
            Err(NetworkError::Topology { link: 3, .. })
        ));

        let mut spec = CorridorSpec::uniform_mainline(3, 200.0, FD);
        spec.push_onramp(0, 160.0, FD);
        spec.push_offramp(0, 100.0, 0.2);
        assert!(matches!(
            build_network(&spec, 5.0),
            Err(NetworkError::Topology { link: 4, .. })
        ));

        let mut spec = CorridorSpec::uniform_mainline(3, 200.0, FD);
        spec.links[1].fd = Some((30.0, 0.0, 0.12));
        assert!(matches!(
            build_network(&spec, 5.0),
            Err(NetworkError::Parameter { link: 1, .. })
        ));

        let mut spec = CorridorSpec::uniform_mainline(3, 200.0, FD);
        spec.push_offramp(1, 100.0, 1.5);
        assert!(matches!(
            build_network(&spec, 5.0),
            Err(NetworkError::Topology { link: 3, .. })
        ));
    }

    #[test]
    fn build_is_deterministic_and_csv_round_trips() {
        let mut spec = CorridorSpec::uniform_mainline(6, 210.0, FD);
        spec.push_onramp(1, 120.0, (20.0, 6.0, 0.12));
        spec.push_offramp(3, 80.0, 0.25);
        let a = build_network(&spec, 5.0).unwrap();
        let b = build_network(&spec, 5.0).unwrap();
        assert_eq!(a, b);

        let parsed = CorridorSpec::from_reader(spec.to_csv().as_bytes()).unwrap();
        assert_eq!(parsed, spec);
    }

    #[test]
    fn parse_errors_cite_lines() {
        let text = "id,kind,length_m,v_f,w,rho_j,attach,beta\n\
                    0,mainline,200,30,6,0.12,,\n\
                    1,mainline,abc,30,6,0.12,,\n";
        match CorridorSpec::from_reader(text.as_bytes()) {
            Err(NetworkError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("length_m"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_header = "id,kind\n0,mainline\n";
        assert!(matches!(
            CorridorSpec::from_reader(bad_header.as_bytes()),
            Err(NetworkError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn merge_and_diverge_wiring() {
        let mut spec = CorridorSpec::uniform_mainline(4, 200.0, FD);
        let on = spec.push_onramp(0, 160.0, FD);
        let off = spec.push_offramp(2, 100.0, 0.3);
        let net = build_network(&spec, 5.0).unwrap();
        let merge = net
            .nodes()
            .iter()
            .find(|n| n.kind == NodeKind::Merge)
            .unwrap();
        assert_eq!(merge.upstream, vec![0, on]);
        assert_eq!(merge.downstream, vec![1]);
        let div = &net.nodes()[net.diverges()[0]];
        assert_eq!(div.upstream, vec![2]);
        assert_eq!(div.downstream, vec![3, off]);
        assert_eq!(div.beta, Some(0.3));
        let entries: Vec<_> = net.sources().iter().map(|&s| net.source_entry(s)).collect();
        assert_eq!(entries, vec![0, on]);
    }
}

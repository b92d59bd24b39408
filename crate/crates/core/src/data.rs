//! File ingestion: loop-detector and probe records, probe map matching,
//! five-minute binning and boundary demand series.
//!
//! All tables are comma-separated with a header row; `#` starts a comment
//! line and columns may appear in any order. Timestamps are integer seconds
//! from the start of the run.
//!
//! | file           | columns                                                |
//! |----------------|--------------------------------------------------------|
//! | `loops.csv`    | `time_s,detector,link,density,flow,speed,healthy`      |
//! | `probes.csv`   | `time_s,device,x,y,link,speed,heading`                 |
//! | `geometry.csv` | `link,x_min,x_max,y_min,y_max,bearing_deg`             |
//! | `demand.csv`   | `time_s,link,flow`                                     |
//!
//! Loop rows need either `density` or both `flow` and `speed`. Probe rows
//! need either `x,y` or a pre-matched `link`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

use crate::fusion::Measurement;
use crate::network::{LinkId, Network};

/// Width of a measurement bin in seconds.
pub const BIN_SECONDS: f64 = 300.0;

/// Maximum angular distance between a probe heading and a link bearing.
pub const HEADING_TOLERANCE_DEG: f64 = 15.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("geometry boxes of links {a} and {b} overlap")]
    Overlap { a: LinkId, b: LinkId },
    #[error("line {line}: link {link} does not exist or carries no density")]
    UnknownLink { line: u64, link: LinkId },
    #[error("no flow records for source feeding link {link} during {}", fmt_intervals(.intervals))]
    Coverage {
        link: LinkId,
        intervals: Vec<(u64, u64)>,
    },
    #[error("link {0} is neither a source nor the link a source feeds")]
    NotABoundary(LinkId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_intervals(intervals: &[(u64, u64)]) -> String {
    intervals
        .iter()
        .map(|(a, b)| format!("[{a}, {b})"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn parse_err(line: u64, message: impl Into<String>) -> DataError {
    DataError::Parse {
        line,
        message: message.into(),
    }
}

/// Deserializes every row, returning each with its 1-based line number.
fn read_table<T: DeserializeOwned, R: Read>(reader: R) -> Result<Vec<(u64, T)>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        rows.push((line, row));
    }
    Ok(rows)
}

fn non_negative(value: Option<f64>, what: &str, line: u64) -> Result<(), DataError> {
    match value {
        Some(v) if !(v.is_finite() && v >= 0.0) => Err(parse_err(
            line,
            format!("{what} must be non-negative, got {v}"),
        )),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct LoopRecord {
    pub time_s: u64,
    pub detector: String,
    pub link: LinkId,
    /// veh/m
    pub density: Option<f64>,
    /// veh/s
    pub flow: Option<f64>,
    /// m/s
    pub speed: Option<f64>,
    pub healthy: bool,
    #[serde(skip)]
    pub line: u64,
}

impl LoopRecord {
    /// Reported density, or flow over speed when only the pair is given.
    pub fn density(&self) -> Option<f64> {
        match (self.density, self.flow, self.speed) {
            (Some(d), _, _) => Some(d),
            (None, Some(q), Some(v)) if v > 0.0 => Some(q / v),
            (None, Some(0.0), Some(_)) => Some(0.0),
            _ => None,
        }
    }

    /// Reported flow, or density times speed.
    pub fn flow(&self) -> Option<f64> {
        match (self.flow, self.density, self.speed) {
            (Some(q), _, _) => Some(q),
            (None, Some(d), Some(v)) => Some(d * v),
            _ => None,
        }
    }
}

/// Reads loop records sorted by time. Unhealthy rows are kept and marked.
pub fn parse_loops<R: Read>(reader: R) -> Result<Vec<LoopRecord>, DataError> {
    let mut records = Vec::new();
    for (line, mut r) in read_table::<LoopRecord, R>(reader)? {
        r.line = line;
        non_negative(r.density, "density", line)?;
        non_negative(r.flow, "flow", line)?;
        non_negative(r.speed, "speed", line)?;
        if r.density.is_none() && (r.flow.is_none() || r.speed.is_none()) {
            return Err(parse_err(line, "need density or both flow and speed"));
        }
        if r.density().is_none() {
            return Err(parse_err(line, "positive flow with zero speed"));
        }
        records.push(r);
    }
    records.sort_by_key(|r| r.time_s);
    Ok(records)
}

pub fn parse_loops_path(path: &Path) -> Result<Vec<LoopRecord>, DataError> {
    parse_loops(std::fs::File::open(path)?)
}

/// Checks that every record names a link that carries density.
pub fn check_loop_links(records: &[LoopRecord], net: &Network) -> Result<(), DataError> {
    for r in records {
        if r.link >= net.links().len() || net.fd(r.link).is_none() {
            return Err(DataError::UnknownLink {
                line: r.line,
                link: r.link,
            });
        }
    }
    Ok(())
}

/// Density measurements from healthy loop records, optionally restricted
/// to a set of detectors.
pub fn loop_measurements(records: &[LoopRecord], detectors: Option<&[String]>) -> Vec<Measurement> {
    records
        .iter()
        .filter(|r| r.healthy)
        .filter(|r| detectors.is_none_or(|d| d.contains(&r.detector)))
        .filter_map(|r| {
            let value = r.density()?;
            let mut m = Measurement::density(r.link, value, r.time_s as f64);
            m.device = Some(r.detector.clone());
            Some(m)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ProbeRecord {
    pub time_s: u64,
    /// Hashed device identifier.
    pub device: String,
    /// Corridor-local easting (m).
    pub x: Option<f64>,
    /// Corridor-local northing (m).
    pub y: Option<f64>,
    /// Pre-matched link, used when no position is given.
    pub link: Option<LinkId>,
    /// m/s
    pub speed: f64,
    /// Degrees clockwise from north, in [0, 360).
    pub heading: f64,
}

pub fn parse_probes<R: Read>(reader: R) -> Result<Vec<ProbeRecord>, DataError> {
    let mut records = Vec::new();
    for (line, r) in read_table::<ProbeRecord, R>(reader)? {
        non_negative(Some(r.speed), "speed", line)?;
        if !(0.0..360.0).contains(&r.heading) {
            return Err(parse_err(
                line,
                format!("heading {} outside [0, 360)", r.heading),
            ));
        }
        match (r.x, r.y, r.link) {
            (Some(x), Some(y), _) if x.is_finite() && y.is_finite() => {}
            (None, None, Some(_)) => {}
            _ => return Err(parse_err(line, "need both x and y, or a link")),
        }
        records.push(r);
    }
    records.sort_by_key(|r| r.time_s);
    Ok(records)
}

pub fn parse_probes_path(path: &Path) -> Result<Vec<ProbeRecord>, DataError> {
    parse_probes(std::fs::File::open(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct LinkGeometry {
    pub link: LinkId,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// End-to-end bearing of the link in degrees.
    pub bearing_deg: f64,
}

impl LinkGeometry {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }

    fn overlaps(&self, other: &Self) -> bool {
        self.x_min < other.x_max
            && other.x_min < self.x_max
            && self.y_min < other.y_max
            && other.y_min < self.y_max
    }
}

/// Link bounding boxes, validated pairwise non-overlapping. Boxes may share
/// an edge; a point on a shared edge matches no link.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    boxes: Vec<LinkGeometry>,
}

impl Geometry {
    pub fn new(boxes: Vec<LinkGeometry>) -> Result<Self, DataError> {
        for (i, a) in boxes.iter().enumerate() {
            for b in &boxes[i + 1..] {
                if a.overlaps(b) {
                    return Err(DataError::Overlap {
                        a: a.link,
                        b: b.link,
                    });
                }
            }
        }
        Ok(Self { boxes })
    }

    pub fn boxes(&self) -> &[LinkGeometry] {
        &self.boxes
    }

    fn bearing(&self, link: LinkId) -> Option<f64> {
        self.boxes
            .iter()
            .find(|b| b.link == link)
            .map(|b| b.bearing_deg)
    }
}

pub fn parse_geometry<R: Read>(reader: R) -> Result<Geometry, DataError> {
    let mut boxes = Vec::new();
    for (line, g) in read_table::<LinkGeometry, R>(reader)? {
        if !(g.x_min <= g.x_max && g.y_min <= g.y_max) {
            return Err(parse_err(line, "box minimum exceeds maximum"));
        }
        boxes.push(g);
    }
    Geometry::new(boxes)
}

pub fn parse_geometry_path(path: &Path) -> Result<Geometry, DataError> {
    parse_geometry(std::fs::File::open(path)?)
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

pub fn loops_to_csv(records: &[LoopRecord]) -> String {
    let mut out = String::from("time_s,detector,link,density,flow,speed,healthy\n");
    for r in records {
        out += &format!(
            "{},{},{},{},{},{},{}\n",
            r.time_s,
            r.detector,
            r.link,
            opt(&r.density),
            opt(&r.flow),
            opt(&r.speed),
            r.healthy
        );
    }
    out
}

pub fn probes_to_csv(records: &[ProbeRecord]) -> String {
    let mut out = String::from("time_s,device,x,y,link,speed,heading\n");
    for r in records {
        out += &format!(
            "{},{},{},{},{},{},{}\n",
            r.time_s,
            r.device,
            opt(&r.x),
            opt(&r.y),
            opt(&r.link),
            r.speed,
            r.heading
        );
    }
    out
}

pub fn geometry_to_csv(geometry: &Geometry) -> String {
    let mut out = String::from("link,x_min,x_max,y_min,y_max,bearing_deg\n");
    for b in &geometry.boxes {
        out += &format!(
            "{},{},{},{},{},{}\n",
            b.link, b.x_min, b.x_max, b.y_min, b.y_max, b.bearing_deg
        );
    }
    out
}

/// Distance between two headings on the circle, in [0, 180].
pub fn angular_distance(a_deg: f64, b_deg: f64) -> f64 {
    let d = (a_deg - b_deg).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeOutcome {
    Matched(LinkId),
    HeadingRejected(LinkId),
    GeometryRejected,
}

/// Assigns a probe point to the single box containing it, keeping it only
/// if its heading is within the tolerance of that link's bearing.
/// Pre-matched records skip the box test but not the heading test.
pub fn classify_probe(p: &ProbeRecord, geometry: &Geometry) -> ProbeOutcome {
    let (link, bearing) = match (p.x, p.y, p.link) {
        (Some(x), Some(y), _) => {
            let mut inside = geometry.boxes.iter().filter(|b| b.contains(x, y));
            match (inside.next(), inside.next()) {
                (Some(b), None) => (b.link, Some(b.bearing_deg)),
                _ => return ProbeOutcome::GeometryRejected,
            }
        }
        (_, _, Some(link)) => (link, geometry.bearing(link)),
        _ => return ProbeOutcome::GeometryRejected,
    };
    match bearing {
        Some(b) if angular_distance(p.heading, b) > HEADING_TOLERANCE_DEG => {
            ProbeOutcome::HeadingRejected(link)
        }
        _ => ProbeOutcome::Matched(link),
    }
}

pub fn match_probe(p: &ProbeRecord, geometry: &Geometry) -> Option<LinkId> {
    match classify_probe(p, geometry) {
        ProbeOutcome::Matched(link) => Some(link),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchStats {
    pub matched: usize,
    pub heading_rejected: usize,
    pub geometry_rejected: usize,
}

impl MatchStats {
    pub fn total(&self) -> usize {
        self.matched + self.heading_rejected + self.geometry_rejected
    }
}

impl fmt::Display for MatchStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "matched {}, heading-rejected {}, geometry-rejected {}",
            self.matched, self.heading_rejected, self.geometry_rejected
        )
    }
}

/// Velocity measurements from matched probe records.
pub fn probe_measurements(
    records: &[ProbeRecord],
    geometry: &Geometry,
) -> (Vec<Measurement>, MatchStats) {
    let mut stats = MatchStats::default();
    let mut out = Vec::new();
    for p in records {
        match classify_probe(p, geometry) {
            ProbeOutcome::Matched(link) => {
                stats.matched += 1;
                let mut m = Measurement::velocity(link, p.speed, p.time_s as f64);
                m.device = Some(p.device.clone());
                out.push(m);
            }
            ProbeOutcome::HeadingRejected(_) => stats.heading_rejected += 1,
            ProbeOutcome::GeometryRejected => stats.geometry_rejected += 1,
        }
    }
    (out, stats)
}

/// Measurements of one bin and the filter step at which they are used.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub bin: usize,
    /// State index `n` (time `n·dt`) after whose prediction the batch is
    /// assimilated: the first step at or after the bin's end.
    pub step: usize,
    pub measurements: Vec<Measurement>,
}

pub fn bin_index(time_s: f64, width_s: f64) -> usize {
    (time_s / width_s).floor() as usize
}

/// First filter step at or after the end of `bin`.
pub fn assimilation_step(bin: usize, width_s: f64, dt: f64) -> usize {
    ((bin as f64 + 1.0) * width_s / dt - 1e-9).ceil() as usize
}

/// Groups measurements into half-open bins `[k·w, (k+1)·w)`. Only
/// non-empty bins are returned, in time order; order within a bin follows
/// the input.
pub fn bin_measurements(measurements: Vec<Measurement>, width_s: f64, dt: f64) -> Vec<Batch> {
    let mut bins: BTreeMap<usize, Vec<Measurement>> = BTreeMap::new();
    for m in measurements {
        bins.entry(bin_index(m.time_s, width_s))
            .or_default()
            .push(m);
    }
    bins.into_iter()
        .map(|(bin, measurements)| Batch {
            bin,
            step: assimilation_step(bin, width_s, dt),
            measurements,
        })
        .collect()
}

/// Nominal boundary demands (veh/s per source, in [`Network::sources`]
/// order) for the transition starting at state `step`.
pub trait DemandProvider {
    fn demands(&self, step: usize, dt: f64, out: &mut [f64]);
}

/// Source slot of a link that is either a source or the link it feeds.
pub fn source_slot_for(net: &Network, link: LinkId) -> Option<usize> {
    net.sources()
        .iter()
        .position(|&s| s == link || net.source_entry(s) == link)
}

/// Piecewise-constant boundary demand from breakpoints. A source's demand
/// is zero before its first breakpoint and for sources without rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    /// Per source slot: `(time_s, flow)` sorted by time.
    breakpoints: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Deserialize)]
struct DemandRow {
    time_s: u64,
    link: LinkId,
    flow: f64,
}

impl DemandProfile {
    pub fn new(mut breakpoints: Vec<Vec<(f64, f64)>>) -> Self {
        for b in &mut breakpoints {
            b.sort_by(|x, y| x.0.total_cmp(&y.0));
        }
        Self { breakpoints }
    }

    /// Constant demand per source.
    pub fn constant(flows: &[f64]) -> Self {
        Self::new(flows.iter().map(|&q| vec![(0.0, q)]).collect())
    }

    pub fn breakpoints(&self) -> &[Vec<(f64, f64)>] {
        &self.breakpoints
    }

    pub fn at(&self, slot: usize, t: f64) -> f64 {
        let b = &self.breakpoints[slot];
        match b.partition_point(|&(s, _)| s <= t) {
            0 => 0.0,
            i => b[i - 1].1,
        }
    }

    pub fn from_reader<R: Read>(reader: R, net: &Network) -> Result<Self, DataError> {
        let mut breakpoints = vec![Vec::new(); net.sources().len()];
        for (line, row) in read_table::<DemandRow, R>(reader)? {
            non_negative(Some(row.flow), "flow", line)?;
            let slot = source_slot_for(net, row.link).ok_or(DataError::NotABoundary(row.link))?;
            breakpoints[slot].push((row.time_s as f64, row.flow));
        }
        Ok(Self::new(breakpoints))
    }

    pub fn from_path(path: &Path, net: &Network) -> Result<Self, DataError> {
        Self::from_reader(std::fs::File::open(path)?, net)
    }

    pub fn to_csv(&self, net: &Network) -> String {
        let mut out = String::from("time_s,link,flow\n");
        for (slot, b) in self.breakpoints.iter().enumerate() {
            for &(t, q) in b {
                out.push_str(&format!("{},{},{}\n", t, net.sources()[slot], q));
            }
        }
        out
    }
}

impl DemandProvider for DemandProfile {
    fn demands(&self, step: usize, dt: f64, out: &mut [f64]) {
        let t = step as f64 * dt;
        for (slot, d) in out.iter_mut().enumerate() {
            *d = self.at(slot, t);
        }
    }
}

/// Demand held at the previous bin's mean measured flow.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySeries {
    width_s: f64,
    /// Per bin, per source slot.
    nominal: Vec<Vec<f64>>,
}

impl BoundarySeries {
    pub fn nominal(&self) -> &[Vec<f64>] {
        &self.nominal
    }
}

impl DemandProvider for BoundarySeries {
    fn demands(&self, step: usize, dt: f64, out: &mut [f64]) {
        let bin = bin_index(step as f64 * dt, self.width_s).min(self.nominal.len() - 1);
        out.copy_from_slice(&self.nominal[bin]);
    }
}

/// Builds the zero-order-hold demand series from loop records on the
/// sources or the links they feed. The first bin uses its own measurement.
pub fn boundary_series(
    records: &[LoopRecord],
    net: &Network,
    horizon_s: f64,
    width_s: f64,
) -> Result<BoundarySeries, DataError> {
    let bins = ((horizon_s / width_s).ceil() as usize).max(1);
    let sources = net.sources().len();
    let mut sum = vec![vec![0.0; sources]; bins];
    let mut count = vec![vec![0usize; sources]; bins];
    for r in records.iter().filter(|r| r.healthy) {
        let (Some(slot), Some(q)) = (source_slot_for(net, r.link), r.flow()) else {
            continue;
        };
        let k = bin_index(r.time_s as f64, width_s);
        if k < bins {
            sum[k][slot] += q;
            count[k][slot] += 1;
        }
    }
    // Bin k is driven by bin k − 1, so the last bin's data is never needed.
    let needed = bins.saturating_sub(1).max(1);
    let mut nominal = vec![vec![0.0; sources]; bins];
    for slot in 0..sources {
        let missing: Vec<usize> = (0..needed).filter(|&k| count[k][slot] == 0).collect();
        if !missing.is_empty() {
            let mut intervals: Vec<(u64, u64)> = Vec::new();
            for k in missing {
                let (a, b) = (
                    (k as f64 * width_s) as u64,
                    ((k + 1) as f64 * width_s) as u64,
                );
                match intervals.last_mut() {
                    Some(last) if last.1 == a => last.1 = b,
                    _ => intervals.push((a, b)),
                }
            }
            return Err(DataError::Coverage {
                link: net.source_entry(net.sources()[slot]),
                intervals,
            });
        }
        let mean = |k: usize| sum[k][slot] / count[k][slot] as f64;
        for (k, row) in nominal.iter_mut().enumerate() {
            row[slot] = mean(k.saturating_sub(1));
        }
    }
    Ok(BoundarySeries { width_s, nominal })
}

//! Scenario configuration, read from TOML.
//!
//! ```toml
//! corridor = "corridor.csv"   # omit for the built-in reference corridor
//! demand = "demand.csv"       # omit for the built-in reference demand
//! horizon_s = 7200
//! dt_s = 5
//! particles = 1000
//! mode = "fused"              # open_loop | loops_only | probes_only | fused
//! penetration_rate = 0.03
//! measurement_noise_frac = 0.10
//! detectors = [0, 5, 10]      # link ids; omit for the reference placement
//! held_out = [10]
//! boundary = "profile"        # profile | loops
//! mape_floor = 1e-4
//!
//! [seeds]
//! truth = 1
//! filter = 2
//! measurement = 3
//!
//! [noise]        # process noise of the stochastic model
//! [likelihood]   # variance floors, outlier rule, resampling threshold
//! [init]         # noise_frac, warmup_s
//! [demo]         # seeds, penetration_rates, pgm
//! ```
//!
//! Relative paths are resolved against the configuration file's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::ctm::NoiseConfig;
use crate::data::BIN_SECONDS;
use crate::fusion::LikelihoodConfig;
use crate::network::LinkId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OpenLoop,
    LoopsOnly,
    ProbesOnly,
    Fused,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::OpenLoop,
        Mode::LoopsOnly,
        Mode::ProbesOnly,
        Mode::Fused,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::OpenLoop => "open_loop",
            Mode::LoopsOnly => "loops_only",
            Mode::ProbesOnly => "probes_only",
            Mode::Fused => "fused",
        }
    }

    pub fn uses_loops(self) -> bool {
        matches!(self, Mode::LoopsOnly | Mode::Fused)
    }

    pub fn uses_probes(self) -> bool {
        matches!(self, Mode::ProbesOnly | Mode::Fused)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode '{s}'"))
    }
}

/// Where the filter takes its nominal boundary demand from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySource {
    /// The nominal demand profile that drives the ground truth.
    Profile,
    /// Flows measured at the sources, held for one bin.
    Loops,
}

impl FromStr for BoundarySource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "profile" => Ok(BoundarySource::Profile),
            "loops" => Ok(BoundarySource::Loops),
            _ => Err(format!("unknown boundary source '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub truth: u64,
    pub filter: u64,
    pub measurement: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            truth: 1,
            filter: 2,
            measurement: 3,
        }
    }
}

impl Seeds {
    /// The `i`-th seed triple of a sweep.
    pub fn offset(self, i: u64) -> Self {
        let k = 1000 * i;
        Self {
            truth: self.truth + k,
            filter: self.filter + k,
            measurement: self.measurement + k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Particles start at the warm-up state scaled by `1 + noise_frac·N(0,1)`.
    pub noise_frac: f64,
    /// Length of the deterministic warm-up from an empty corridor, run at
    /// the demand of the first step.
    pub warmup_s: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            noise_frac: 0.1,
            warmup_s: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    /// Number of seed triples in the sweep.
    pub seeds: usize,
    pub penetration_rates: Vec<f64>,
    /// Also write graymap renderings of every grid.
    pub pgm: bool,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            seeds: 10,
            penetration_rates: vec![0.01, 0.02, 0.03],
            pgm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub corridor: Option<PathBuf>,
    pub demand: Option<PathBuf>,
    pub horizon_s: f64,
    pub dt_s: f64,
    pub particles: usize,
    pub mode: Mode,
    pub penetration_rate: f64,
    pub measurement_noise_frac: f64,
    pub detectors: Option<Vec<LinkId>>,
    pub held_out: Vec<LinkId>,
    pub boundary: BoundarySource,
    pub mape_floor: f64,
    pub seeds: Seeds,
    pub noise: NoiseConfig,
    pub likelihood: LikelihoodConfig,
    pub init: InitConfig,
    pub demo: DemoConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            corridor: None,
            demand: None,
            horizon_s: 7200.0,
            dt_s: 5.0,
            particles: 1000,
            mode: Mode::Fused,
            penetration_rate: 0.03,
            measurement_noise_frac: 0.10,
            detectors: None,
            held_out: Vec::new(),
            boundary: BoundarySource::Profile,
            mape_floor: 1e-4,
            seeds: Seeds::default(),
            // Splits at concentration 50 leave realizations too close to the
            // nominal run for the estimators to differ.
            noise: NoiseConfig {
                split_concentration: Some(REFERENCE_SPLIT_CONCENTRATION),
                ..NoiseConfig::default()
            },
            likelihood: LikelihoodConfig::default(),
            init: InitConfig::default(),
            demo: DemoConfig::default(),
        }
    }
}

/// Split-ratio concentration of the reference scenario.
pub const REFERENCE_SPLIT_CONCENTRATION: f64 = 10.0;

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Reads and validates a configuration file, resolving relative paths.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.corridor, &mut cfg.demand].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Number of filter steps over the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon_s / self.dt_s).round() as usize
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.dt_s > 0.0) {
            return Err(invalid(format!("dt_s must be positive, got {}", self.dt_s)));
        }
        let per_bin = BIN_SECONDS / self.dt_s;
        if (per_bin - per_bin.round()).abs() > 1e-9 {
            return Err(invalid(format!(
                "dt_s = {} does not divide the {BIN_SECONDS} s bin",
                self.dt_s
            )));
        }
        let steps = self.horizon_s / self.dt_s;
        if !(self.horizon_s > 0.0) || (steps - steps.round()).abs() > 1e-9 {
            return Err(invalid(format!(
                "horizon_s = {} must be a positive multiple of dt_s",
                self.horizon_s
            )));
        }
        if self.particles == 0 {
            return Err(invalid("particles must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.penetration_rate) {
            return Err(invalid(format!(
                "penetration_rate {} outside [0, 1]",
                self.penetration_rate
            )));
        }
        if !(self.measurement_noise_frac >= 0.0) {
            return Err(invalid("measurement_noise_frac must be non-negative"));
        }
        if !(self.mape_floor > 0.0) {
            return Err(invalid("mape_floor must be positive"));
        }
        if !(self.init.noise_frac >= 0.0 && self.init.warmup_s >= 0.0) {
            return Err(invalid(
                "init.noise_frac and init.warmup_s must be non-negative",
            ));
        }
        if let Some(d) = &self.detectors {
            if let Some(h) = self.held_out.iter().find(|h| !d.contains(h)) {
                return Err(invalid(format!(
                    "held-out detector {h} is not among the placed detectors"
                )));
            }
        }
        if self
            .demo
            .penetration_rates
            .iter()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(invalid("demo penetration rates must lie in [0, 1]"));
        }
        self.likelihood
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }
}

//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for invalid configuration or input files,
//! 2 for failures during a run.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use freeway_rbpf::data::{
    check_loop_links, geometry_to_csv, loop_measurements, loops_to_csv, parse_geometry_path,
    parse_loops_path, parse_probes_path, probe_measurements, probes_to_csv, DataError,
};
use freeway_rbpf::harness::demo::{observe, run_demo};
use freeway_rbpf::harness::export::{grid_to_pgm, meta_txt, read_grid, report_csv, write_grid};
use freeway_rbpf::harness::filter::{run_filter, Observations};
use freeway_rbpf::harness::metrics::critical_densities;
use freeway_rbpf::harness::simulate::{generate_truth, loop_records};
use freeway_rbpf::harness::{
    compute_mape, BoundarySource, HarnessError, Mode, Scenario, ScenarioConfig,
};
use freeway_rbpf::network::LinkId;

#[derive(Parser)]
#[command(
    name = "freeway-rbpf",
    version,
    about = "Freeway density estimation with loop and probe data"
)]
struct Cli {
    /// Scenario file (TOML); flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true)]
    particles: Option<usize>,
    /// open_loop, loops_only, probes_only or fused.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    #[arg(long, global = true)]
    penetration_rate: Option<f64>,
    #[arg(long, global = true)]
    horizon_s: Option<f64>,
    #[arg(long, global = true)]
    dt_s: Option<f64>,
    #[arg(long, global = true)]
    measurement_noise_frac: Option<f64>,
    /// profile or loops.
    #[arg(long, global = true)]
    boundary: Option<BoundarySource>,
    /// Comma-separated detector links.
    #[arg(long, global = true, value_delimiter = ',')]
    detectors: Option<Vec<LinkId>>,
    /// Comma-separated held-out detector links.
    #[arg(long, global = true, value_delimiter = ',')]
    held_out: Option<Vec<LinkId>>,
    #[arg(long, global = true)]
    seed_truth: Option<u64>,
    #[arg(long, global = true)]
    seed_filter: Option<u64>,
    #[arg(long, global = true)]
    seed_measurement: Option<u64>,
    /// Number of seed triples in `demo`.
    #[arg(long, global = true)]
    demo_seeds: Option<usize>,
    /// Also write graymaps.
    #[arg(long, global = true)]
    pgm: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Ground truth and simulated loop, boundary and probe files.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs one filter mode on a data directory.
    Filter {
        /// Directory with loops.csv, probes.csv, geometry.csv and optionally
        /// boundary.csv and truth.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// MAPE of an estimate matrix against a reference matrix.
    Evaluate {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Checks the configuration and any input files without running.
    Validate {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Multi-seed sweep over all modes and penetration rates.
    Demo {
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure {
            code: if e.is_validation() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

fn in_file<T>(path: &Path, r: Result<T, impl Into<HarnessError>>) -> Result<T, Failure> {
    r.map_err(|e| {
        let mut f = Failure::from(e.into());
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn invalid(msg: impl Display) -> Failure {
    Failure {
        code: 1,
        message: msg.to_string(),
    }
}

fn load_config(path: Option<&Path>, o: &Overrides) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(v) = o.particles {
        cfg.particles = v;
    }
    if let Some(v) = o.mode {
        cfg.mode = v;
    }
    if let Some(v) = o.penetration_rate {
        cfg.penetration_rate = v;
    }
    if let Some(v) = o.horizon_s {
        cfg.horizon_s = v;
    }
    if let Some(v) = o.dt_s {
        cfg.dt_s = v;
    }
    if let Some(v) = o.measurement_noise_frac {
        cfg.measurement_noise_frac = v;
    }
    if let Some(v) = o.boundary {
        cfg.boundary = v;
    }
    if let Some(v) = &o.detectors {
        cfg.detectors = Some(v.clone());
    }
    if let Some(v) = &o.held_out {
        cfg.held_out = v.clone();
    }
    if let Some(v) = o.seed_truth {
        cfg.seeds.truth = v;
    }
    if let Some(v) = o.seed_filter {
        cfg.seeds.filter = v;
    }
    if let Some(v) = o.seed_measurement {
        cfg.seeds.measurement = v;
    }
    if let Some(v) = o.demo_seeds {
        cfg.demo.seeds = v;
    }
    if o.pgm {
        cfg.demo.pgm = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn max_jam(scn: &Scenario) -> f64 {
    scn.net
        .mainline()
        .iter()
        .filter_map(|&l| scn.net.fd(l).map(|fd| fd.jam_density()))
        .fold(0.0, f64::max)
}

fn simulate(scn: &Scenario, out: &Path) -> Result<(), Failure> {
    let truth = generate_truth(scn, scn.cfg.seeds.truth)?;
    let grid = truth.grid(&scn.net);
    let obs = observe(scn, &truth, scn.cfg.penetration_rate);
    fs::create_dir_all(out)?;
    let mut cfg = scn.cfg.clone();
    cfg.corridor = Some("corridor.csv".into());
    cfg.demand = Some("demand.csv".into());
    cfg.detectors = Some(scn.detectors.clone());
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    fs::write(out.join("corridor.csv"), scn.spec.to_csv())?;
    fs::write(out.join("demand.csv"), scn.profile.to_csv(&scn.net))?;
    write_grid(&out.join("truth.csv"), &grid)?;
    fs::write(
        out.join("loops.csv"),
        loops_to_csv(&loop_records(&obs.loops)),
    )?;
    fs::write(out.join("boundary.csv"), loops_to_csv(&obs.boundary))?;
    fs::write(out.join("probes.csv"), probes_to_csv(&obs.probes))?;
    fs::write(out.join("geometry.csv"), geometry_to_csv(&scn.geometry))?;
    if scn.cfg.demo.pgm {
        fs::write(out.join("truth.pgm"), grid_to_pgm(&grid, max_jam(scn)))?;
    }
    println!(
        "wrote {} loop readings, {} probe records to {}",
        obs.loops.len(),
        obs.probes.len(),
        out.display()
    );
    Ok(())
}

/// Reads whichever input files exist in `dir`, validating each.
struct DataDir {
    loops: Option<Vec<freeway_rbpf::data::LoopRecord>>,
    boundary: Option<Vec<freeway_rbpf::data::LoopRecord>>,
    probes: Option<Vec<freeway_rbpf::data::ProbeRecord>>,
    geometry: Option<freeway_rbpf::data::Geometry>,
}

fn read_optional<T>(
    dir: &Path,
    name: &str,
    parse: impl Fn(&Path) -> Result<T, DataError>,
) -> Result<Option<T>, Failure> {
    let path = dir.join(name);
    if !path.exists() {
        return Ok(None);
    }
    in_file(&path, parse(&path)).map(Some)
}

fn read_data_dir(scn: &Scenario, dir: &Path) -> Result<DataDir, Failure> {
    if !dir.is_dir() {
        return Err(invalid(format!("{}: not a directory", dir.display())));
    }
    let d = DataDir {
        loops: read_optional(dir, "loops.csv", parse_loops_path)?,
        boundary: read_optional(dir, "boundary.csv", parse_loops_path)?,
        probes: read_optional(dir, "probes.csv", parse_probes_path)?,
        geometry: read_optional(dir, "geometry.csv", parse_geometry_path)?,
    };
    for (name, records) in [("loops.csv", &d.loops), ("boundary.csv", &d.boundary)] {
        if let Some(r) = records {
            in_file(&dir.join(name), check_loop_links(r, &scn.net))?;
        }
    }
    Ok(d)
}

fn filter(scn: &Scenario, data: &Path, out: &Path) -> Result<(), Failure> {
    let d = read_data_dir(scn, data)?;
    let mode = scn.cfg.mode;
    if mode.uses_loops() && d.loops.is_none() {
        return Err(invalid(format!(
            "{mode} needs {}",
            data.join("loops.csv").display()
        )));
    }
    if mode.uses_probes() && d.probes.is_none() {
        return Err(invalid(format!(
            "{mode} needs {}",
            data.join("probes.csv").display()
        )));
    }
    if scn.cfg.boundary == BoundarySource::Loops && d.boundary.is_none() {
        return Err(invalid(format!(
            "boundary = loops needs {}",
            data.join("boundary.csv").display()
        )));
    }
    let mut scn = scn.clone();
    if let Some(g) = d.geometry {
        scn.geometry = g;
    }
    let obs = Observations {
        loops: loop_measurements(d.loops.as_deref().unwrap_or_default(), None),
        probes: d.probes.unwrap_or_default(),
        boundary: d.boundary.unwrap_or_default(),
        penetration_rate: scn.cfg.penetration_rate,
    };
    let truth_path = data.join("truth.csv");
    let truth = if truth_path.exists() {
        Some(in_file(&truth_path, read_grid(&truth_path))?)
    } else {
        None
    };
    let report = run_filter(&scn, mode, &obs, truth.as_ref())?;
    fs::create_dir_all(out)?;
    write_grid(
        &out.join(format!("estimate_{}.csv", report.label)),
        &report.estimate,
    )?;
    if scn.cfg.demo.pgm {
        fs::write(
            out.join(format!("estimate_{}.pgm", report.label)),
            grid_to_pgm(&report.estimate, max_jam(&scn)),
        )?;
    }
    let reports = [report];
    fs::write(out.join("report.csv"), report_csv(&reports))?;
    fs::write(out.join("meta.txt"), meta_txt(&scn.cfg, &reports))?;
    let r = &reports[0];
    println!("{}: {}", r.label, r.stats.probes);
    if let Some(m) = &r.mape {
        println!("{}: overall MAPE {:.4}", r.label, m.overall);
    }
    for h in &r.held_out {
        if let Some(v) = h.mape {
            println!("{}: held-out detector {} MAPE {:.4}", r.label, h.link, v);
        }
    }
    Ok(())
}

fn evaluate(scn: &Scenario, estimate: &Path, truth: &Path) -> Result<(), Failure> {
    let est = in_file(estimate, read_grid(estimate))?;
    let reference = in_file(truth, read_grid(truth))?;
    if reference.links.iter().any(|&l| scn.net.fd(l).is_none()) {
        return Err(invalid(format!(
            "{}: rows do not match the scenario corridor",
            truth.display()
        )));
    }
    let crit = critical_densities(&reference, &scn.net);
    let m = compute_mape(&est, &reference, &crit, scn.cfg.mape_floor)?;
    let show = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
    println!("overall {:.6}", m.overall);
    println!("congested {}", show(m.congested));
    println!("freeflow {}", show(m.freeflow));
    println!("congested_cells {}", m.congested_cells);
    println!("freeflow_cells {}", m.freeflow_cells);
    println!("excluded_cells {}", m.excluded);
    Ok(())
}

fn validate(scn: &Scenario, data: Option<&Path>) -> Result<(), Failure> {
    println!(
        "scenario ok: {} links, {} sources, {} detectors",
        scn.net.links().len(),
        scn.net.sources().len(),
        scn.detectors.len()
    );
    if let Some(dir) = data {
        let d = read_data_dir(scn, dir)?;
        if let Some(r) = &d.loops {
            println!("loops.csv ok: {} records", r.len());
        }
        if let Some(r) = &d.boundary {
            println!("boundary.csv ok: {} records", r.len());
        }
        if let Some(g) = &d.geometry {
            println!("geometry.csv ok: {} boxes", g.boxes().len());
        }
        if let Some(p) = &d.probes {
            let geometry = d.geometry.as_ref().unwrap_or(&scn.geometry);
            let (_, stats) = probe_measurements(p, geometry);
            println!("probes.csv ok: {} records ({stats})", p.len());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    let scn = Scenario::new(cfg)?;
    match cli.command {
        Command::Simulate { out } => simulate(&scn, &out),
        Command::Filter { data, out } => filter(&scn, &data, &out),
        Command::Evaluate { estimate, truth } => evaluate(&scn, &estimate, &truth),
        Command::Validate { data } => validate(&scn, data.as_deref()),
        Command::Demo { out } => {
            let outcomes = run_demo(&scn, &out)?;
            println!("{} seeds written to {}", outcomes.len(), out.display());
            print!("{}", fs::read_to_string(out.join("summary.csv"))?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

//! Output files: density matrices, MAPE reports, run metadata and
//! graymap renderings. Numbers use Rust's shortest round-trip formatting so
//! re-exports are byte-identical and re-reads are exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::ScenarioConfig;
use super::filter::RunReport;
use super::metrics::{Grid, Mape};
use super::HarnessError;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Matrix with one row per link (upstream first) and one column per
/// timestep; the header row holds state times in seconds.
pub fn grid_to_csv(grid: &Grid) -> String {
    let mut out = String::from("link");
    for c in 0..grid.steps {
        write!(out, ",{}", grid.time(c)).unwrap();
    }
    out.push('\n');
    for (r, link) in grid.links.iter().enumerate() {
        write!(out, "{link}").unwrap();
        for v in grid.row(r) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn grid_from_csv(text: &str) -> Result<Grid, HarnessError> {
    let bad = |line: usize, msg: &str| HarnessError::Shape(format!("line {line}: {msg}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty grid file"))?;
    let times: Vec<f64> = header
        .split(',')
        .skip(1)
        .map(|t| t.parse::<f64>().map_err(|_| bad(1, "bad time in header")))
        .collect::<Result<_, _>>()?;
    let dt = times.first().copied().unwrap_or(1.0);
    let mut links = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let link = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad(i + 2, "bad link id"))?;
        let row: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|_| bad(i + 2, "bad density")))
            .collect::<Result<_, _>>()?;
        if row.len() != times.len() {
            return Err(bad(i + 2, "row length differs from header"));
        }
        links.push(link);
        rows.push(row);
    }
    Grid::from_rows(links, dt, rows)
}

pub fn write_grid(path: &Path, grid: &Grid) -> Result<(), HarnessError> {
    fs::write(path, grid_to_csv(grid))?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<Grid, HarnessError> {
    grid_from_csv(&fs::read_to_string(path)?)
}

/// Binary graymap, one pixel per cell; darker is denser.
pub fn grid_to_pgm(grid: &Grid, max_density: f64) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.steps, grid.links.len()).into_bytes();
    for r in 0..grid.links.len() {
        for &v in grid.row(r) {
            let level = (1.0 - (v / max_density).clamp(0.0, 1.0)) * 255.0;
            out.push(level.round() as u8);
        }
    }
    out
}

pub const REPORT_HEADER: &str = "run,metric,value";

fn mape_rows(out: &mut String, label: &str, m: &Mape) {
    writeln!(out, "{label},overall,{}", m.overall).unwrap();
    writeln!(out, "{label},congested,{}", opt(m.congested)).unwrap();
    writeln!(out, "{label},freeflow,{}", opt(m.freeflow)).unwrap();
    writeln!(out, "{label},evaluated_cells,{}", m.evaluated()).unwrap();
    writeln!(out, "{label},excluded_cells,{}", m.excluded).unwrap();
}

/// Long-format table of every run's MAPE split, held-out errors and
/// filter statistics.
pub fn report_csv(reports: &[RunReport]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in reports {
        if let Some(m) = &r.mape {
            mape_rows(&mut out, &r.label, m);
        }
        for h in &r.held_out {
            writeln!(out, "{},heldout_{},{}", r.label, h.link, opt(h.mape)).unwrap();
        }
        let s = &r.stats;
        for (name, v) in [
            ("assimilations", s.assimilations),
            ("measurements_used", s.measurements_used),
            ("outliers_rejected", s.outliers),
            ("resamples", s.resamples),
            ("degenerate_updates", s.degenerate),
            ("probes_matched", s.probes.matched),
            ("probes_heading_rejected", s.probes.heading_rejected),
            ("probes_geometry_rejected", s.probes.geometry_rejected),
        ] {
            writeln!(out, "{},{name},{v}", r.label).unwrap();
        }
    }
    out
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.3}%", 100.0 * x))
        .unwrap_or_else(|| "-".into())
}

/// Human-readable run metadata; run timings are left out so the file is
/// reproducible.
pub fn meta_txt(cfg: &ScenarioConfig, reports: &[RunReport]) -> String {
    let mut out = String::new();
    writeln!(out, "seeds.truth = {}", cfg.seeds.truth).unwrap();
    writeln!(out, "seeds.filter = {}", cfg.seeds.filter).unwrap();
    writeln!(out, "seeds.measurement = {}", cfg.seeds.measurement).unwrap();
    writeln!(out, "particles = {}", cfg.particles).unwrap();
    writeln!(out, "dt_s = {}", cfg.dt_s).unwrap();
    writeln!(out, "horizon_s = {}", cfg.horizon_s).unwrap();
    writeln!(out, "boundary = {:?}", cfg.boundary).unwrap();
    writeln!(out).unwrap();
    writeln!(
        out,
        "{:<24} {:>10} {:>10} {:>10}",
        "run", "congested", "freeflow", "overall"
    )
    .unwrap();
    for r in reports {
        if let Some(m) = &r.mape {
            writeln!(
                out,
                "{:<24} {:>10} {:>10} {:>10}",
                r.label,
                pct(m.congested),
                pct(m.freeflow),
                pct(Some(m.overall))
            )
            .unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_shape_and_round_trip() {
        let rows = vec![
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.0, 1e-17, 0.12345678901234566, 0.5],
            vec![0.3, 0.3, 0.3, 0.3],
        ];
        let g = Grid::from_rows(vec![0, 1, 2], 5.0, rows).unwrap();
        let text = grid_to_csv(&g);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "link,5,10,15,20");
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 5));
        assert_eq!(grid_from_csv(&text).unwrap(), g);
        assert_eq!(grid_to_csv(&g), text);
    }

    #[test]
    fn graymap_header() {
        let g = Grid::from_rows(vec![0, 1], 5.0, vec![vec![0.0, 0.36], vec![0.18, 1.0]]).unwrap();
        let pgm = grid_to_pgm(&g, 0.36);
        assert!(pgm.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&pgm[pgm.len() - 4..], &[255, 0, 128, 0]);
    }
}

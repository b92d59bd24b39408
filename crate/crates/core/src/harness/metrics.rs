//! Density grids and mean absolute percentage error.

use super::HarnessError;
use crate::network::{LinkId, Network};

/// Link-by-time matrix of densities. Row `r` is `links[r]`; column `c` is
/// the state at time `(c + 1)·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub links: Vec<LinkId>,
    pub dt: f64,
    pub steps: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(links: Vec<LinkId>, dt: f64, steps: usize) -> Self {
        let data = vec![0.0; links.len() * steps];
        Self {
            links,
            dt,
            steps,
            data,
        }
    }

    pub fn from_rows(
        links: Vec<LinkId>,
        dt: f64,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, HarnessError> {
        let steps = rows.first().map_or(0, Vec::len);
        if rows.len() != links.len() || rows.iter().any(|r| r.len() != steps) {
            return Err(HarnessError::Shape("ragged grid rows".into()));
        }
        Ok(Self {
            links,
            dt,
            steps,
            data: rows.concat(),
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.steps + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.steps + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.steps..(row + 1) * self.steps]
    }

    /// Writes one column from a per-link vector indexed by link id.
    pub fn set_column(&mut self, col: usize, by_link: &[f64]) {
        for r in 0..self.links.len() {
            self.data[r * self.steps + col] = by_link[self.links[r]];
        }
    }

    pub fn row_of(&self, link: LinkId) -> Option<usize> {
        self.links.iter().position(|&l| l == link)
    }

    /// Column holding the state at `time_s`, if it is on the grid.
    pub fn column_at(&self, time_s: f64) -> Option<usize> {
        let n = (time_s / self.dt).round() as usize;
        (n >= 1 && n <= self.steps).then(|| n - 1)
    }

    pub fn time(&self, col: usize) -> f64 {
        (col + 1) as f64 * self.dt
    }
}

/// Mean absolute percentage errors as fractions (0.05 is 5%).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mape {
    pub overall: f64,
    pub congested: Option<f64>,
    pub freeflow: Option<f64>,
    pub congested_cells: usize,
    pub freeflow_cells: usize,
    /// Cells skipped because the reference is below the floor.
    pub excluded: usize,
}

impl Mape {
    pub fn evaluated(&self) -> usize {
        self.congested_cells + self.freeflow_cells
    }
}

/// Critical density of each grid row's link.
pub fn critical_densities(grid: &Grid, net: &Network) -> Vec<f64> {
    grid.links
        .iter()
        .map(|&l| net.fd(l).map_or(f64::INFINITY, |fd| fd.critical_density()))
        .collect()
}

/// Average of `|estimate − reference| / reference` over cells with
/// reference at least `floor`. A cell is congested when its reference
/// exceeds the row's critical density.
pub fn compute_mape(
    estimate: &Grid,
    reference: &Grid,
    critical: &[f64],
    floor: f64,
) -> Result<Mape, HarnessError> {
    if estimate.links != reference.links || estimate.steps != reference.steps {
        return Err(HarnessError::Shape(format!(
            "estimate is {}x{}, reference is {}x{}",
            estimate.links.len(),
            estimate.steps,
            reference.links.len(),
            reference.steps
        )));
    }
    if critical.len() != reference.links.len() {
        return Err(HarnessError::Shape(
            "one critical density per row needed".into(),
        ));
    }
    let (mut cong, mut free) = (0.0, 0.0);
    let (mut n_cong, mut n_free, mut excluded) = (0usize, 0usize, 0usize);
    for (r, &rc) in critical.iter().enumerate() {
        for (&x, &y) in estimate.row(r).iter().zip(reference.row(r)) {
            if !(y >= floor) {
                excluded += 1;
                continue;
            }
            let e = (x - y).abs() / y;
            if y > rc {
                cong += e;
                n_cong += 1;
            } else {
                free += e;
                n_free += 1;
            }
        }
    }
    let n = n_cong + n_free;
    if n == 0 {
        return Err(HarnessError::Shape("no cells above the MAPE floor".into()));
    }
    let mean = |sum: f64, count: usize| (count > 0).then(|| sum / count as f64);
    Ok(Mape {
        overall: (cong + free) / n as f64,
        congested: mean(cong, n_cong),
        freeflow: mean(free, n_free),
        congested_cells: n_cong,
        freeflow_cells: n_free,
        excluded,
    })
}

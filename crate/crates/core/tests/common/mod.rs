//! Shared fixtures: a small discrete-state traffic model with an exact
//! forward-recursion oracle, and helpers for running the CLI.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use freeway_rbpf::ctm::{step_deterministic, DensityState};
use freeway_rbpf::network::{build_network, CorridorSpec, Network};

/// Two links whose densities each take one of three levels; the inflow is
/// drawn from a three-point distribution every step and the CTM result is
/// snapped to the nearest level on each link.
pub struct HmmToy {
    pub net: Network,
    pub levels: [f64; 3],
    pub inflows: [(f64, f64); 3],
    /// Standard deviation of the density measurement on each link.
    pub sigma: f64,
}

pub const STATES: usize = 9;

impl HmmToy {
    pub fn new() -> Self {
        // Downstream link is a bottleneck (capacity 0.3 veh/s) so both
        // branches of the diagram are visited.
        let mut spec = CorridorSpec::uniform_mainline(2, 100.0, (20.0, 5.0, 0.1));
        spec.links[1].fd = Some((20.0, 5.0, 0.075));
        Self {
            net: build_network(&spec, 2.0).unwrap(),
            levels: [0.005, 0.02, 0.045],
            inflows: [(0.1, 0.25), (0.3, 0.5), (0.5, 0.25)],
            sigma: 0.006,
        }
    }

    pub fn decode(&self, s: usize) -> [f64; 2] {
        [self.levels[s / 3], self.levels[s % 3]]
    }

    pub fn encode(&self, x: &[f64]) -> usize {
        3 * self.nearest(x[0]) + self.nearest(x[1])
    }

    fn nearest(&self, rho: f64) -> usize {
        (0..3)
            .min_by(|&a, &b| {
                (self.levels[a] - rho)
                    .abs()
                    .total_cmp(&(self.levels[b] - rho).abs())
            })
            .unwrap()
    }

    /// Next discrete state from state `s` under inflow index `k`.
    pub fn next(&self, s: usize, k: usize) -> usize {
        let mut x = DensityState::empty(&self.net);
        let main = self.net.mainline();
        let [a, b] = self.decode(s);
        x.rho[main[0]] = a;
        x.rho[main[1]] = b;
        let y = step_deterministic(&self.net, &x, &[self.inflows[k].0], &[]).unwrap();
        self.encode(&[y.rho[main[0]], y.rho[main[1]]])
    }

    /// Transition matrix `T[i][j] = P(x' = j | x = i)` by enumeration.
    pub fn transition_matrix(&self) -> [[f64; STATES]; STATES] {
        let mut t = [[0.0; STATES]; STATES];
        for (i, row) in t.iter_mut().enumerate() {
            for (k, &(_, p)) in self.inflows.iter().enumerate() {
                row[self.next(i, k)] += p;
            }
        }
        t
    }

    pub fn likelihood(&self, s: usize, y: [f64; 2]) -> f64 {
        let x = self.decode(s);
        let g = |m: f64, v: f64| (-(m - v).powi(2) / (2.0 * self.sigma * self.sigma)).exp();
        g(y[0], x[0]) * g(y[1], x[1])
    }
}

/// Normalized filtering distributions `p(x_t | y_1..y_t)` by the forward
/// recursion: predict through `T`, multiply by the likelihood, normalize.
pub fn forward(
    toy: &HmmToy,
    prior: &[f64; STATES],
    observations: &[[f64; 2]],
) -> Vec<[f64; STATES]> {
    let t = toy.transition_matrix();
    let mut alpha = *prior;
    let mut out = Vec::new();
    for &y in observations {
        let mut next = [0.0; STATES];
        for i in 0..STATES {
            for j in 0..STATES {
                next[j] += alpha[i] * t[i][j];
            }
        }
        for (j, a) in next.iter_mut().enumerate() {
            *a *= toy.likelihood(j, y);
        }
        let z: f64 = next.iter().sum();
        next.iter_mut().for_each(|a| *a /= z);
        alpha = next;
        out.push(alpha);
    }
    out
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_freeway-rbpf")
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

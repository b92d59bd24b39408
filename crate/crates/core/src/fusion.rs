//! Measurement layer of the Rao-Blackwellized particle filter.
//!
//! Particles carry only link densities. Velocity measurements are scored
//! against a velocity pseudostate computed in closed form from each
//! particle's densities, so the likelihood of a batch factors into
//!
//! ```text
//! g(y | x) = Π_i N(y_i^ρ; x^ρ_L(i), σ̂²ρ_L(i)) · Π_j N(y_j^v; v̄_L(j)(x^ρ), σ̂²v_L(j))
//! ```
//!
//! where the variances are weighted population variances of the predicted
//! ensemble, floored to keep a collapsed ensemble from producing
//! zero-width likelihoods. The density-to-velocity map is deterministic;
//! a stochastic map would slot into [`pseudostate_velocity`].
//!
//! Measurements that are implausible for every particle (best
//! log-likelihood below the Gaussian log-density at `outlier_sigmas`
//! standard deviations) are dropped for the whole ensemble before
//! reweighing.
//!
//! Known weakness: with Gaussian velocity likelihoods, persistent slow
//! probe reports on an uncongested link pull the estimate into congestion
//! unless density measurements nearby disagree.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctm::{link_velocity, step_stochastic, CtmError, DensityState, NoiseModel};
use crate::network::{LinkId, Network};
use crate::rng::{stream, Domain};
use crate::smc::{ParticleEnsemble, Reweigh, SmcError};

pub type Ensemble = ParticleEnsemble<DensityState>;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Smc(#[from] SmcError<CtmError>),
    #[error("measurement on link {0} which carries no density")]
    UnknownLink(LinkId),
    #[error("velocity measurement on link {0} given to the density-only filter")]
    VelocityInDensityFilter(LinkId),
    #[error("invalid likelihood configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    Density,
    Velocity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub kind: MeasurementKind,
    /// veh/m for density, m/s for velocity.
    pub value: f64,
    pub link: LinkId,
    /// Observation time (s since run start).
    pub time_s: f64,
    pub device: Option<String>,
}

impl Measurement {
    pub fn density(link: LinkId, value: f64, time_s: f64) -> Self {
        Self {
            kind: MeasurementKind::Density,
            value,
            link,
            time_s,
            device: None,
        }
    }

    pub fn velocity(link: LinkId, value: f64, time_s: f64) -> Self {
        Self {
            kind: MeasurementKind::Velocity,
            value,
            link,
            time_s,
            device: None,
        }
    }
}

/// Link velocities implied by one particle's densities (m/s, by link id;
/// zero for links without a fundamental diagram).
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityPseudostate {
    pub vbar: Vec<f64>,
}

pub fn pseudostate_velocity(particle: &DensityState, net: &Network) -> VelocityPseudostate {
    let vbar = net
        .links()
        .iter()
        .map(|l| match &l.fd {
            Some(fd) => link_velocity(fd, particle.rho[l.id]),
            None => 0.0,
        })
        .collect();
    VelocityPseudostate { vbar }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LikelihoodConfig {
    /// Density variance floor is `(density_floor_frac · ρ_j)²`.
    pub density_floor_frac: f64,
    /// Velocity variance floor is `(velocity_floor_frac · v_f)²`.
    pub velocity_floor_frac: f64,
    /// Measurements further than this many standard deviations from every
    /// particle are rejected as outliers.
    pub outlier_sigmas: f64,
    /// Resample only when the effective sample size falls below this
    /// fraction of `P`. `None` resamples after every assimilation.
    pub resample_ess_fraction: Option<f64>,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        Self {
            density_floor_frac: 0.01,
            velocity_floor_frac: 0.01,
            outlier_sigmas: 6.0,
            resample_ess_fraction: None,
        }
    }
}

impl LikelihoodConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.density_floor_frac > 0.0 && self.velocity_floor_frac > 0.0) {
            return Err(FusionError::Config(
                "variance floors must be positive".into(),
            ));
        }
        if !(self.outlier_sigmas > 0.0) {
            return Err(FusionError::Config(
                "outlier_sigmas must be positive".into(),
            ));
        }
        if let Some(f) = self.resample_ess_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(FusionError::Config(format!(
                    "resample_ess_fraction {f} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    fn floor(&self, net: &Network, link: LinkId, kind: MeasurementKind) -> f64 {
        match (net.fd(link), kind) {
            (Some(fd), MeasurementKind::Density) => {
                (self.density_floor_frac * fd.jam_density()).powi(2)
            }
            (Some(fd), MeasurementKind::Velocity) => {
                (self.velocity_floor_frac * fd.free_speed()).powi(2)
            }
            (None, _) => f64::MIN_POSITIVE,
        }
    }
}

/// Per-link likelihood variances for both measurement kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkVariances {
    pub density: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl LinkVariances {
    pub fn of(&self, kind: MeasurementKind) -> &[f64] {
        match kind {
            MeasurementKind::Density => &self.density,
            MeasurementKind::Velocity => &self.velocity,
        }
    }
}

fn weighted_variances<'a, F>(
    count: usize,
    weights: &[f64],
    values: F,
    floors: impl Fn(usize) -> f64,
) -> Vec<f64>
where
    F: Fn(usize) -> &'a [f64],
{
    let mut mean = vec![0.0; count];
    for (p, &w) in weights.iter().enumerate() {
        for (m, x) in mean.iter_mut().zip(values(p)) {
            *m += w * x;
        }
    }
    let mut var = vec![0.0; count];
    for (p, &w) in weights.iter().enumerate() {
        for ((v, x), m) in var.iter_mut().zip(values(p)).zip(&mean) {
            *v += w * (x - m) * (x - m);
        }
    }
    var.iter()
        .enumerate()
        .map(|(l, &v)| v.max(floors(l)))
        .collect()
}

/// Weighted population variance per link of the density (or of the
/// velocity pseudostate), floored per [`LikelihoodConfig`].
pub fn ensemble_variances(
    ensemble: &Ensemble,
    kind: MeasurementKind,
    net: &Network,
    cfg: &LikelihoodConfig,
) -> Vec<f64> {
    match kind {
        MeasurementKind::Density => density_variances(ensemble, net, cfg),
        MeasurementKind::Velocity => {
            let pseudo = pseudostates(ensemble, net);
            velocity_variances(ensemble, &pseudo, net, cfg)
        }
    }
}

fn density_variances(ensemble: &Ensemble, net: &Network, cfg: &LikelihoodConfig) -> Vec<f64> {
    let particles = ensemble.particles();
    weighted_variances(
        net.links().len(),
        ensemble.weights(),
        |p| &particles[p].rho,
        |l| cfg.floor(net, l, MeasurementKind::Density),
    )
}

fn velocity_variances(
    ensemble: &Ensemble,
    pseudo: &[VelocityPseudostate],
    net: &Network,
    cfg: &LikelihoodConfig,
) -> Vec<f64> {
    weighted_variances(
        net.links().len(),
        ensemble.weights(),
        |p| &pseudo[p].vbar,
        |l| cfg.floor(net, l, MeasurementKind::Velocity),
    )
}

fn pseudostates(ensemble: &Ensemble, net: &Network) -> Vec<VelocityPseudostate> {
    ensemble
        .particles()
        .par_iter()
        .map(|x| pseudostate_velocity(x, net))
        .collect()
}

fn gaussian_log_pdf(y: f64, mean: f64, var: f64) -> f64 {
    let d = y - mean;
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * d * d / var
}

fn predicted_value(m: &Measurement, particle: &DensityState, vbar: &VelocityPseudostate) -> f64 {
    match m.kind {
        MeasurementKind::Density => particle.rho[m.link],
        MeasurementKind::Velocity => vbar.vbar[m.link],
    }
}

/// Log of [`measurement_likelihood`].
pub fn measurement_log_likelihood(
    m: &Measurement,
    particle: &DensityState,
    vbar: &VelocityPseudostate,
    variances: &LinkVariances,
) -> f64 {
    let var = variances.of(m.kind)[m.link];
    gaussian_log_pdf(m.value, predicted_value(m, particle, vbar), var)
}

/// Gaussian density of the measured value around the particle's density
/// (or pseudostate velocity) on the measured link.
pub fn measurement_likelihood(
    m: &Measurement,
    particle: &DensityState,
    vbar: &VelocityPseudostate,
    variances: &LinkVariances,
) -> f64 {
    measurement_log_likelihood(m, particle, vbar, variances).exp()
}

/// Log of [`particle_likelihood`]: density factors first, then velocity.
pub fn particle_log_likelihood(
    batch: &[Measurement],
    particle: &DensityState,
    vbar: &VelocityPseudostate,
    variances: &LinkVariances,
) -> f64 {
    let mut total = 0.0;
    for kind in [MeasurementKind::Density, MeasurementKind::Velocity] {
        for m in batch.iter().filter(|m| m.kind == kind) {
            total += measurement_log_likelihood(m, particle, vbar, variances);
        }
    }
    total
}

/// Product of per-measurement likelihoods over an already screened batch.
/// An empty batch carries no information and scores 1.
pub fn particle_likelihood(
    batch: &[Measurement],
    particle: &DensityState,
    vbar: &VelocityPseudostate,
    variances: &LinkVariances,
) -> f64 {
    particle_log_likelihood(batch, particle, vbar, variances).exp()
}

/// Splits a batch into measurements kept for every particle and the
/// number rejected for being implausible under every particle.
pub fn screen_outliers(
    batch: &[Measurement],
    particles: &[DensityState],
    pseudo: &[VelocityPseudostate],
    variances: &LinkVariances,
    cfg: &LikelihoodConfig,
) -> (Vec<Measurement>, usize) {
    let k = cfg.outlier_sigmas;
    let mut kept = Vec::with_capacity(batch.len());
    for m in batch {
        let var = variances.of(m.kind)[m.link];
        let threshold = -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * k * k;
        let best = particles
            .iter()
            .zip(pseudo)
            .map(|(x, v)| measurement_log_likelihood(m, x, v, variances))
            .fold(f64::NEG_INFINITY, f64::max);
        if best >= threshold {
            kept.push(m.clone());
        }
    }
    let rejected = batch.len() - kept.len();
    (kept, rejected)
}

/// Randomness and resampling settings for one filter run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterStreams {
    pub seed: u64,
}

/// Advances every particle one step through the stochastic CTM using the
/// particle's own stream for this step.
pub fn predict(
    ensemble: &mut Ensemble,
    net: &Network,
    nominal_demands: &[f64],
    noise: &NoiseModel,
    streams: FilterStreams,
) -> Result<(), FusionError> {
    let step = ensemble.step() as u64;
    ensemble.predict(|p, x| {
        let mut rng = stream(streams.seed, Domain::Transition, p as u64, step);
        step_stochastic(net, x, nominal_demands, noise, &mut rng)
    })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assimilation {
    pub used: usize,
    pub rejected: usize,
    pub reweigh: Option<Reweigh>,
    pub ess: f64,
    pub resampled: bool,
}

fn check_links(batch: &[Measurement], net: &Network) -> Result<(), FusionError> {
    for m in batch {
        if m.link >= net.links().len() || net.fd(m.link).is_none() {
            return Err(FusionError::UnknownLink(m.link));
        }
    }
    Ok(())
}

fn finish(
    ensemble: &mut Ensemble,
    log_lik: &[f64],
    used: usize,
    rejected: usize,
    cfg: &LikelihoodConfig,
    streams: FilterStreams,
) -> Result<Assimilation, FusionError> {
    if used == 0 {
        return Ok(Assimilation {
            used,
            rejected,
            reweigh: None,
            ess: ensemble.effective_sample_size(),
            resampled: false,
        });
    }
    let reweigh = ensemble.reweigh_log(log_lik)?;
    let ess = ensemble.effective_sample_size();
    let wanted = match cfg.resample_ess_fraction {
        None => true,
        Some(f) => ess < f * ensemble.len() as f64,
    };
    let resampled = reweigh == Reweigh::Updated && wanted;
    if resampled {
        let mut rng = stream(streams.seed, Domain::Resample, ensemble.step() as u64, 0);
        ensemble.resample_multinomial(&mut rng);
    }
    Ok(Assimilation {
        used,
        rejected,
        reweigh: Some(reweigh),
        ess,
        resampled,
    })
}

/// Density-only assimilation: likelihood from density measurements alone.
pub fn assimilate_density(
    ensemble: &mut Ensemble,
    batch: &[Measurement],
    net: &Network,
    cfg: &LikelihoodConfig,
    streams: FilterStreams,
) -> Result<Assimilation, FusionError> {
    check_links(batch, net)?;
    if let Some(m) = batch.iter().find(|m| m.kind == MeasurementKind::Velocity) {
        return Err(FusionError::VelocityInDensityFilter(m.link));
    }
    if batch.is_empty() {
        return finish(ensemble, &[], 0, 0, cfg, streams);
    }
    let variances = LinkVariances {
        density: density_variances(ensemble, net, cfg),
        velocity: Vec::new(),
    };
    // Density factors never read the pseudostate.
    let none = VelocityPseudostate { vbar: Vec::new() };
    let pseudo = vec![none.clone(); ensemble.len()];
    let (kept, rejected) = screen_outliers(batch, ensemble.particles(), &pseudo, &variances, cfg);
    let log_lik: Vec<f64> = ensemble
        .particles()
        .par_iter()
        .map(|x| particle_log_likelihood(&kept, x, &none, &variances))
        .collect();
    finish(ensemble, &log_lik, kept.len(), rejected, cfg, streams)
}

/// Fused assimilation of density and velocity measurements through the
/// velocity pseudostate.
pub fn assimilate_fused(
    ensemble: &mut Ensemble,
    batch: &[Measurement],
    net: &Network,
    cfg: &LikelihoodConfig,
    streams: FilterStreams,
) -> Result<Assimilation, FusionError> {
    check_links(batch, net)?;
    if batch.is_empty() {
        return finish(ensemble, &[], 0, 0, cfg, streams);
    }
    let pseudo = pseudostates(ensemble, net);
    let variances = LinkVariances {
        density: density_variances(ensemble, net, cfg),
        velocity: velocity_variances(ensemble, &pseudo, net, cfg),
    };
    let (kept, rejected) = screen_outliers(batch, ensemble.particles(), &pseudo, &variances, cfg);
    let log_lik: Vec<f64> = ensemble
        .particles()
        .par_iter()
        .zip(&pseudo)
        .map(|(x, v)| particle_log_likelihood(&kept, x, v, &variances))
        .collect();
    finish(ensemble, &log_lik, kept.len(), rejected, cfg, streams)
}

/// One step of the plain particle filter: predict, then assimilate density
/// measurements.
#[allow(clippy::too_many_arguments)]
pub fn pf_step(
    ensemble: &mut Ensemble,
    batch: &[Measurement],
    net: &Network,
    nominal_demands: &[f64],
    noise: &NoiseModel,
    cfg: &LikelihoodConfig,
    streams: FilterStreams,
) -> Result<Assimilation, FusionError> {
    predict(ensemble, net, nominal_demands, noise, streams)?;
    assimilate_density(ensemble, batch, net, cfg, streams)
}

/// One step of the Rao-Blackwellized filter: predict, compute each
/// particle's velocity pseudostate, screen outliers, reweigh with the
/// factored likelihood, normalize and resample.
#[allow(clippy::too_many_arguments)]
pub fn rbpf_step(
    ensemble: &mut Ensemble,
    batch: &[Measurement],
    net: &Network,
    nominal_demands: &[f64],
    noise: &NoiseModel,
    cfg: &LikelihoodConfig,
    streams: FilterStreams,
) -> Result<Assimilation, FusionError> {
    predict(ensemble, net, nominal_demands, noise, streams)?;
    assimilate_fused(ensemble, batch, net, cfg, streams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctm::NoiseConfig;
    use crate::network::{build_network, CorridorSpec};
    use std::convert::Infallible;

    const FD: (f64, f64, f64) = (30.0, 6.0, 0.12);

    fn chain(n: usize) -> Network {
        build_network(&CorridorSpec::uniform_mainline(n, 200.0, FD), 5.0).unwrap()
    }

    fn state(net: &Network, rho: &[f64]) -> DensityState {
        let mut s = DensityState::empty(net);
        s.rho[..rho.len()].copy_from_slice(rho);
        s
    }

    fn ensemble(net: &Network, rows: &[&[f64]]) -> Ensemble {
        Ensemble::from_particles(rows.iter().map(|r| state(net, r)).collect())
    }

    fn vars(net: &Network, density: f64, velocity: f64) -> LinkVariances {
        let n = net.links().len();
        LinkVariances {
            density: vec![density; n],
            velocity: vec![velocity; n],
        }
    }

    #[test]
    fn pseudostate_examples() {
        let net = chain(3);
        let v = pseudostate_velocity(&state(&net, &[0.0, 0.0, 0.0]), &net);
        assert_eq!(&v.vbar[..3], &[30.0, 30.0, 30.0]);
        let v = pseudostate_velocity(&state(&net, &[0.0, 0.12, 0.04]), &net);
        assert_eq!(v.vbar[1], 0.0);
        assert!((v.vbar[2] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn variance_examples() {
        let net = chain(3);
        let cfg = LikelihoodConfig::default();
        let e = ensemble(&net, &[&[0.03, 0.02, 0.0], &[0.03, 0.04, 0.0]]);
        let v = ensemble_variances(&e, MeasurementKind::Density, &net, &cfg);
        let floor = (0.01f64 * 0.12).powi(2);
        assert_eq!(v[0], floor);
        assert!((v[1] - 1e-4).abs() < 1e-16);

        let swapped = ensemble(&net, &[&[0.03, 0.04, 0.0], &[0.03, 0.02, 0.0]]);
        assert_eq!(
            ensemble_variances(&swapped, MeasurementKind::Density, &net, &cfg),
            v
        );

        let vv = ensemble_variances(&e, MeasurementKind::Velocity, &net, &cfg);
        assert_eq!(vv[0], (0.3f64).powi(2));
        // Velocities 30 and 12 with equal weights.
        assert!((vv[1] - 81.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_likelihood_values() {
        let net = chain(3);
        let x = state(&net, &[0.05, 0.0, 0.0]);
        let v = pseudostate_velocity(&x, &net);
        let var = vars(&net, 1e-4, 1.0);
        let peak = measurement_likelihood(&Measurement::density(0, 0.05, 0.0), &x, &v, &var);
        assert!((peak - 1.0 / (2.0 * std::f64::consts::PI * 1e-4).sqrt()).abs() < 1e-9);
        let g = measurement_likelihood(&Measurement::density(0, 0.06, 0.0), &x, &v, &var);
        assert!((g - 24.19707245).abs() < 1e-6, "{g}");
        let lo = measurement_likelihood(&Measurement::density(0, 0.04, 0.0), &x, &v, &var);
        assert!((g - lo).abs() < 1e-9);
    }

    #[test]
    fn particle_likelihood_factors() {
        let net = chain(3);
        let x = state(&net, &[0.05, 0.04, 0.0]);
        let v = pseudostate_velocity(&x, &net);
        let var = vars(&net, 1e-4, 4.0);
        assert_eq!(particle_likelihood(&[], &x, &v, &var), 1.0);
        let d = Measurement::density(0, 0.055, 0.0);
        let u = Measurement::velocity(1, 11.0, 0.0);
        let both = particle_likelihood(&[d.clone(), u.clone()], &x, &v, &var);
        let product =
            measurement_likelihood(&d, &x, &v, &var) * measurement_likelihood(&u, &x, &v, &var);
        assert!((both - product).abs() < 1e-9 * product);
    }

    #[test]
    fn parked_probe_is_screened_out() {
        let net = chain(3);
        let cfg = LikelihoodConfig::default();
        let e = ensemble(
            &net,
            &[
                &[0.01, 0.012, 0.0],
                &[0.011, 0.01, 0.0],
                &[0.009, 0.011, 0.0],
            ],
        );
        let pseudo = pseudostates(&e, &net);
        let variances = LinkVariances {
            density: density_variances(&e, &net, &cfg),
            velocity: velocity_variances(&e, &pseudo, &net, &cfg),
        };
        let parked = Measurement::velocity(1, 0.0, 0.0);
        let loop_m = Measurement::density(0, 0.0105, 0.0);
        let (kept, rejected) = screen_outliers(
            &[loop_m.clone(), parked],
            e.particles(),
            &pseudo,
            &variances,
            &cfg,
        );
        assert_eq!(rejected, 1);
        assert_eq!(kept, vec![loop_m.clone()]);
        for (x, v) in e.particles().iter().zip(&pseudo) {
            assert_eq!(
                particle_likelihood(&kept, x, v, &variances),
                particle_likelihood(std::slice::from_ref(&loop_m), x, v, &variances)
            );
        }
    }

    #[test]
    fn freeflow_velocity_likelihood_is_flat() {
        let net = chain(3);
        let rc = 0.02;
        let var = vars(&net, 1e-4, 9.0);
        let m = Measurement::velocity(1, 28.0, 0.0);
        let values: Vec<f64> = [0.0, 0.25 * rc, 0.5 * rc, 0.99 * rc]
            .iter()
            .map(|&r| {
                let x = state(&net, &[0.01, r, 0.01]);
                measurement_likelihood(&m, &x, &pseudostate_velocity(&x, &net), &var)
            })
            .collect();
        assert!(values.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn density_only_rejects_velocity() {
        let net = chain(3);
        let mut e = ensemble(&net, &[&[0.01, 0.01, 0.01]]);
        let r = assimilate_density(
            &mut e,
            &[Measurement::velocity(0, 20.0, 0.0)],
            &net,
            &LikelihoodConfig::default(),
            FilterStreams { seed: 0 },
        );
        assert!(matches!(r, Err(FusionError::VelocityInDensityFilter(0))));
        let r = assimilate_fused(
            &mut e,
            &[Measurement::density(3, 0.01, 0.0)],
            &net,
            &LikelihoodConfig::default(),
            FilterStreams { seed: 0 },
        );
        assert!(matches!(r, Err(FusionError::UnknownLink(3))));
    }

    fn noisy_ensemble(net: &Network, p: usize, seed: u64) -> Ensemble {
        Ensemble::init(p, |i| {
            use rand::Rng;
            let mut rng = stream(seed, Domain::Initial, i as u64, 0);
            let mut s = DensityState::empty(net);
            for &l in net.mainline() {
                s.rho[l] = rng.random::<f64>() * 0.06;
            }
            Ok::<_, Infallible>(s)
        })
        .unwrap()
    }

    #[test]
    fn rbpf_reduces_to_pf_without_velocity() {
        let net = chain(4);
        let noise = NoiseModel::new(&net, &NoiseConfig::default()).unwrap();
        let cfg = LikelihoodConfig::default();
        let streams = FilterStreams { seed: 21 };
        let mut a = noisy_ensemble(&net, 200, 3);
        let mut b = a.clone();
        for step in 0..30 {
            let batch = if step % 5 == 4 {
                vec![
                    Measurement::density(1, 0.02, 0.0),
                    Measurement::density(3, 0.015, 0.0),
                ]
            } else {
                vec![]
            };
            let ra = pf_step(&mut a, &batch, &net, &[0.4], &noise, &cfg, streams).unwrap();
            let rb = rbpf_step(&mut b, &batch, &net, &[0.4], &noise, &cfg, streams).unwrap();
            assert_eq!(ra, rb);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_batches_are_open_loop() {
        let net = chain(4);
        let noise = NoiseModel::new(&net, &NoiseConfig::default()).unwrap();
        let cfg = LikelihoodConfig::default();
        let mut e = noisy_ensemble(&net, 50, 4);
        for _ in 0..10 {
            let r = rbpf_step(
                &mut e,
                &[],
                &net,
                &[0.3],
                &noise,
                &cfg,
                FilterStreams { seed: 1 },
            )
            .unwrap();
            assert!(!r.resampled);
        }
        assert!(e.weights().iter().all(|&w| w == 1.0 / 50.0));
    }
}

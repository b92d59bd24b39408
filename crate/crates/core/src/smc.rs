//! Sequential Monte Carlo engine.
//!
//! A [`ParticleEnsemble`] holds `P` weighted atoms of the filtering
//! distribution. The engine knows nothing about traffic: prediction takes a
//! transition closure and reweighing takes per-particle likelihoods, so the
//! same machinery runs the plain density filter, the Rao-Blackwellized
//! filter, and the discrete test models used to check it.
//!
//! Only multinomial resampling is provided. Systematic, stratified and
//! residual schemes have lower variance but are not needed here.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::ctm::DensityState;

#[derive(Debug, Error)]
pub enum SmcError<E: std::error::Error + 'static> {
    #[error("an ensemble needs at least one particle")]
    NoParticles,
    #[error("expected {expected} likelihood values, got {found}")]
    LikelihoodLength { expected: usize, found: usize },
    #[error("likelihood of particle {particle} is {value}; must be finite and >= 0")]
    InvalidLikelihood { particle: usize, value: f64 },
    #[error(transparent)]
    Model(E),
}

/// States that can be averaged component-wise.
pub trait WeightedMean: Sized {
    fn weighted_mean(particles: &[Self], weights: &[f64]) -> Self;
}

fn weighted_sum_into(out: &mut [f64], values: &[f64], w: f64) {
    for (o, v) in out.iter_mut().zip(values) {
        *o += w * v;
    }
}

impl WeightedMean for Vec<f64> {
    fn weighted_mean(particles: &[Self], weights: &[f64]) -> Self {
        let mut out = vec![0.0; particles[0].len()];
        for (x, &w) in particles.iter().zip(weights) {
            weighted_sum_into(&mut out, x, w);
        }
        out
    }
}

impl WeightedMean for DensityState {
    fn weighted_mean(particles: &[Self], weights: &[f64]) -> Self {
        let n = particles[0].rho.len();
        let mut rho = vec![0.0; n];
        let mut queue = vec![0.0; n];
        for (x, &w) in particles.iter().zip(weights) {
            weighted_sum_into(&mut rho, &x.rho, w);
            weighted_sum_into(&mut queue, &x.queue, w);
        }
        DensityState { rho, queue }
    }
}

/// Result of a reweighing step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reweigh {
    Updated,
    /// Every particle had zero likelihood; weights were reset to uniform.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble<S> {
    particles: Vec<S>,
    weights: Vec<f64>,
    step: usize,
}

impl<S: Clone + Send + Sync> ParticleEnsemble<S> {
    /// Draws `count` particles from the initial-condition sampler, which
    /// receives the particle index. Weights start uniform.
    pub fn init<F, E>(count: usize, sampler: F) -> Result<Self, SmcError<E>>
    where
        F: Fn(usize) -> Result<S, E> + Sync,
        E: std::error::Error + Send + 'static,
    {
        if count == 0 {
            return Err(SmcError::NoParticles);
        }
        let particles = (0..count)
            .into_par_iter()
            .map(&sampler)
            .collect::<Result<Vec<_>, _>>()
            .map_err(SmcError::Model)?;
        Ok(Self::from_particles(particles))
    }

    /// Equally weighted ensemble over the given particles.
    ///
    /// Panics if `particles` is empty.
    pub fn from_particles(particles: Vec<S>) -> Self {
        assert!(
            !particles.is_empty(),
            "ensemble needs at least one particle"
        );
        let p = particles.len();
        Self {
            particles,
            weights: vec![1.0 / p as f64; p],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[S] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of prediction steps taken.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Advances every particle through the transition kernel. The closure
    /// receives the particle index so it can select that particle's random
    /// stream. Weights are untouched.
    pub fn predict<F, E>(&mut self, transition: F) -> Result<(), SmcError<E>>
    where
        F: Fn(usize, &S) -> Result<S, E> + Sync,
        E: std::error::Error + Send + 'static,
    {
        let next = self
            .particles
            .par_iter()
            .enumerate()
            .map(|(p, x)| transition(p, x))
            .collect::<Result<Vec<_>, _>>()
            .map_err(SmcError::Model)?;
        self.particles = next;
        self.step += 1;
        Ok(())
    }

    /// Multiplies each weight by its likelihood and renormalizes.
    pub fn reweigh<E>(&mut self, likelihoods: &[f64]) -> Result<Reweigh, SmcError<E>>
    where
        E: std::error::Error + 'static,
    {
        self.check_len(likelihoods.len())?;
        let mut logs = Vec::with_capacity(likelihoods.len());
        for (p, &g) in likelihoods.iter().enumerate() {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(SmcError::InvalidLikelihood {
                    particle: p,
                    value: g,
                });
            }
            logs.push(g.ln());
        }
        Ok(self.reweigh_log_unchecked(&logs))
    }

    /// As [`reweigh`](Self::reweigh) with log-likelihoods, which avoids
    /// underflow when many measurement factors are multiplied.
    pub fn reweigh_log<E>(&mut self, log_likelihoods: &[f64]) -> Result<Reweigh, SmcError<E>>
    where
        E: std::error::Error + 'static,
    {
        self.check_len(log_likelihoods.len())?;
        if let Some((p, &v)) = log_likelihoods
            .iter()
            .enumerate()
            .find(|(_, v)| v.is_nan() || **v == f64::INFINITY)
        {
            return Err(SmcError::InvalidLikelihood {
                particle: p,
                value: v,
            });
        }
        Ok(self.reweigh_log_unchecked(log_likelihoods))
    }

    fn check_len<E: std::error::Error + 'static>(&self, found: usize) -> Result<(), SmcError<E>> {
        if found != self.len() {
            return Err(SmcError::LikelihoodLength {
                expected: self.len(),
                found,
            });
        }
        Ok(())
    }

    fn reweigh_log_unchecked(&mut self, log_likelihoods: &[f64]) -> Reweigh {
        let log_w: Vec<f64> = self
            .weights
            .iter()
            .zip(log_likelihoods)
            .map(|(w, l)| w.ln() + l)
            .collect();
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            log::warn!(
                "degenerate ensemble at step {}: all particle likelihoods are zero; resetting weights",
                self.step
            );
            self.reset_weights();
            return Reweigh::Degenerate;
        }
        let unnormalized: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = unnormalized.iter().sum();
        for (w, u) in self.weights.iter_mut().zip(unnormalized) {
            *w = u / total;
        }
        Reweigh::Updated
    }

    pub fn reset_weights(&mut self) {
        let p = self.len() as f64;
        self.weights.iter_mut().for_each(|w| *w = 1.0 / p);
    }

    /// Draws `P` particles i.i.d. with replacement, particle `p` chosen with
    /// probability `w_p`, and resets the weights to `1/P`. Returns the
    /// ancestor index of each new particle.
    pub fn resample_multinomial<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        let mut cdf = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for &w in &self.weights {
            acc += w;
            cdf.push(acc);
        }
        let total = acc;
        let last = self.len() - 1;
        let ancestors: Vec<usize> = (0..self.len())
            .map(|_| {
                let u = rng.random::<f64>() * total;
                cdf.partition_point(|&c| c <= u).min(last)
            })
            .collect();
        self.particles = ancestors
            .iter()
            .map(|&a| self.particles[a].clone())
            .collect();
        self.reset_weights();
        ancestors
    }

    /// `1 / Σ w_p²`, between 1 and `P`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Weighted mean of the particles.
    pub fn empirical_mean(&self) -> S
    where
        S: WeightedMean,
    {
        S::weighted_mean(&self.particles, &self.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use proptest::{prop_assert, prop_assert_eq, proptest};
    use rand_distr::{Distribution, Normal};
    use std::convert::Infallible;

    type Ens = ParticleEnsemble<Vec<f64>>;

    fn ens(values: &[f64], weights: &[f64]) -> Ens {
        let mut e = Ens::from_particles(values.iter().map(|&v| vec![v]).collect());
        e.weights = weights.to_vec();
        e
    }

    fn point_mass(p: usize) -> Ens {
        Ens::init(p, |_| Ok::<_, Infallible>(vec![0.05, 0.01])).unwrap()
    }

    #[test]
    fn init_examples() {
        let e = point_mass(1);
        assert_eq!(e.len(), 1);
        assert_eq!(e.weights(), &[1.0]);

        let e = point_mass(100);
        assert!(e.particles().iter().all(|x| x == &vec![0.05, 0.01]));
        assert!(e.weights().iter().all(|&w| (w - 0.01).abs() < 1e-18));

        assert!(matches!(
            Ens::init(0, |_| Ok::<_, Infallible>(vec![])),
            Err(SmcError::NoParticles)
        ));
    }

    #[test]
    fn init_uniform_sampler_mean() {
        let rc = 0.02;
        let p = 1000;
        let e = Ens::init(p, |i| {
            let mut rng = stream(9, Domain::Initial, i as u64, 0);
            Ok::<_, Infallible>((0..3).map(|_| rng.random::<f64>() * rc).collect())
        })
        .unwrap();
        let mean = e.empirical_mean();
        let sd = rc / 12f64.sqrt();
        for m in mean {
            assert!(
                (m - rc / 2.0).abs() < 3.0 * sd / (p as f64).sqrt(),
                "mean {m}"
            );
        }
    }

    #[test]
    fn predict_keeps_weights() {
        let mut e = ens(&[1.0, 2.0, 3.0], &[0.2, 0.3, 0.5]);
        e.predict(|_, x: &Vec<f64>| Ok::<_, Infallible>(vec![x[0] * 2.0]))
            .unwrap();
        assert_eq!(e.weights(), &[0.2, 0.3, 0.5]);
        assert_eq!(e.particles()[2], vec![6.0]);
        assert_eq!(e.step(), 1);
    }

    #[test]
    fn reweigh_examples() {
        let mut e = ens(&[0.0, 1.0], &[0.2, 0.8]);
        e.reweigh::<Infallible>(&[5.0, 5.0]).unwrap();
        assert!((e.weights()[0] - 0.2).abs() < 1e-15);

        let mut e = ens(&[0.0, 1.0], &[0.5, 0.5]);
        e.reweigh::<Infallible>(&[1.0, 0.0]).unwrap();
        assert_eq!(e.weights(), &[1.0, 0.0]);

        let mut e = ens(&[0.0, 1.0], &[0.2, 0.8]);
        e.reweigh::<Infallible>(&[3.0, 1.0]).unwrap();
        assert!((e.weights()[0] - 0.6 / 1.4).abs() < 1e-12);
        assert!((e.weights()[1] - 0.8 / 1.4).abs() < 1e-12);

        let mut e = ens(&[0.0, 1.0], &[0.3, 0.7]);
        let r = e.reweigh::<Infallible>(&[0.0, 0.0]).unwrap();
        assert_eq!(r, Reweigh::Degenerate);
        assert_eq!(e.weights(), &[0.5, 0.5]);

        let mut e = ens(&[0.0, 1.0], &[0.5, 0.5]);
        assert!(e.reweigh::<Infallible>(&[-1.0, 1.0]).is_err());
        assert!(e.reweigh::<Infallible>(&[1.0]).is_err());
    }

    #[test]
    fn log_reweigh_survives_underflow() {
        let mut e = ens(&[0.0, 1.0], &[0.5, 0.5]);
        e.reweigh_log::<Infallible>(&[-2000.0, -2001.0]).unwrap();
        let expected = 1.0 / (1.0 + (-1f64).exp());
        assert!((e.weights()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn resample_point_mass() {
        let mut e = ens(&[1.0, 2.0, 3.0], &[0.0, 1.0, 0.0]);
        let mut rng = stream(1, Domain::Test, 0, 0);
        let anc = e.resample_multinomial(&mut rng);
        assert!(anc.iter().all(|&a| a == 1));
        assert!(e.particles().iter().all(|x| x[0] == 2.0));
        assert!(e.weights().iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn resample_uniform_counts_pass_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let p = 50;
        let reps = 40;
        let chi = ChiSquared::new((p - 1) as f64).unwrap();
        let mut rejections = 0;
        for rep in 0..reps {
            let mut e = Ens::from_particles((0..p).map(|i| vec![i as f64]).collect());
            let mut rng = stream(rep, Domain::Test, 1, 0);
            let mut counts = vec![0usize; p];
            // Pool a few resamplings so expected counts are large enough.
            for _ in 0..20 {
                let anc = e.resample_multinomial(&mut rng);
                for a in anc {
                    counts[a] += 1;
                }
                e = Ens::from_particles((0..p).map(|i| vec![i as f64]).collect());
            }
            let expected = 20.0;
            let stat: f64 = counts
                .iter()
                .map(|&c| (c as f64 - expected).powi(2) / expected)
                .sum();
            if chi.cdf(stat) > 0.99 {
                rejections += 1;
            }
        }
        // At the 1% level a handful of rejections in 40 repetitions would
        // already be unusual.
        assert!(rejections <= 3, "rejections {rejections}");
    }

    #[test]
    fn resample_preserves_mean_in_expectation() {
        let values = [0.0, 0.1, 0.5, 0.9];
        let weights = [0.1, 0.2, 0.3, 0.4];
        let target: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
        let reps = 10_000;
        let mut means = Vec::with_capacity(reps);
        for rep in 0..reps {
            let mut e = ens(&values, &weights);
            let mut rng = stream(rep as u64, Domain::Test, 2, 0);
            e.resample_multinomial(&mut rng);
            means.push(e.empirical_mean()[0]);
        }
        let m = means.iter().sum::<f64>() / reps as f64;
        let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!((m - target).abs() < 3.0 * se, "mean {m} vs {target}");
    }

    #[test]
    fn empirical_mean_examples() {
        let e = ens(&[0.07], &[1.0]);
        assert_eq!(e.empirical_mean(), vec![0.07]);
        let e = ens(&[0.0, 0.1], &[0.5, 0.5]);
        assert!((e.empirical_mean()[0] - 0.05).abs() < 1e-18);
    }

    /// Neumaier-compensated two-pass reference for the weighted mean.
    fn compensated_mean(values: &[f64], weights: &[f64]) -> f64 {
        let mut sum = 0.0f64;
        let mut c = 0.0f64;
        for (v, w) in values.iter().zip(weights) {
            let term = v * w;
            let t = sum + term;
            if sum.abs() >= term.abs() {
                c += (sum - t) + term;
            } else {
                c += (term - t) + sum;
            }
            sum = t;
        }
        let first = sum + c;
        // Second pass: accumulate residuals around the first estimate.
        let mut r = 0.0;
        for (v, w) in values.iter().zip(weights) {
            r += w * (v - first);
        }
        first + r
    }

    #[test]
    fn empirical_mean_matches_compensated_oracle() {
        let mut rng = stream(4, Domain::Test, 0, 0);
        let normal = Normal::new(0.05, 0.02).unwrap();
        let p = 5000;
        let values: Vec<f64> = (0..p).map(|_| f64::abs(normal.sample(&mut rng))).collect();
        let raw: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let e = ens(&values, &weights);
        let oracle = compensated_mean(&values, &weights);
        assert!((e.empirical_mean()[0] - oracle).abs() < 1e-12);
    }

    #[test]
    fn ess_examples() {
        assert!((ens(&[0.0; 4], &[0.25; 4]).effective_sample_size() - 4.0).abs() < 1e-12);
        assert_eq!(ens(&[0.0, 1.0], &[1.0, 0.0]).effective_sample_size(), 1.0);
        let ess = ens(&[0.0; 3], &[0.5, 0.25, 0.25]).effective_sample_size();
        assert!((ess - 8.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn weights_stay_normalized(
            raw in proptest::collection::vec(0.0f64..10.0, 1..40),
            seed in 0u64..1000,
        ) {
            let p = raw.len();
            let mut e = Ens::from_particles((0..p).map(|i| vec![i as f64]).collect());
            let r = e.reweigh::<Infallible>(&raw).unwrap();
            let sum: f64 = e.weights().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(e.weights().iter().all(|&w| w >= 0.0));
            if r == Reweigh::Updated {
                let ess = e.effective_sample_size();
                prop_assert!(ess >= 1.0 - 1e-9 && ess <= p as f64 + 1e-9);
            }
            let mut rng = stream(seed, Domain::Test, 3, 0);
            e.resample_multinomial(&mut rng);
            let sum: f64 = e.weights().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert_eq!(e.len(), p);
        }
    }
}

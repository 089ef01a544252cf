//! Sequential Monte Carlo over real parameter vectors.
//!
//! A [`ParticleCloud`] stores `N` hypotheses row-major together with their
//! normalized weights. Bayes updates multiply each weight by the probability
//! of the observed bit; Liu–West resampling redraws a uniformly weighted cloud
//! that keeps the posterior mean and covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance of the weight normalization invariant.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleCloud {
    dim: usize,
    particles: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleCloud {
    /// Uniformly weighted cloud from row-major particle data.
    pub fn uniform(dim: usize, particles: Vec<f64>) -> Result<Self> {
        if dim == 0 || particles.is_empty() || particles.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: particles.len(),
            });
        }
        let count = particles.len() / dim;
        Ok(Self {
            dim,
            particles,
            weights: vec![1.0 / count as f64; count],
        })
    }

    pub fn from_weighted(dim: usize, particles: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mut cloud = Self::uniform(dim, particles)?;
        if weights.len() != cloud.len() {
            return Err(Error::DimensionMismatch {
                expected: cloud.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::NonFinite("particle weights"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::AllWeightsZero);
        }
        cloud.weights = weights.iter().map(|w| w / total).collect();
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particles(&self) -> &[f64] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.particles.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    /// Evaluates `likelihood` on every particle, in parallel when a thread
    /// pool is available. Output order matches particle order.
    pub fn map_particles<F>(&self, likelihood: F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        self.particles.par_chunks_exact(self.dim).map(&likelihood).collect()
    }

    /// `w_i ↦ w_i Pr(datum | x_i)` followed by renormalization, with
    /// `pass_probabilities[i] = Pr(1 | x_i)`. The cloud is left untouched
    /// when every updated weight vanishes.
    pub fn update_with(&mut self, datum: bool, pass_probabilities: &[f64]) -> Result<()> {
        if pass_probabilities.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: pass_probabilities.len(),
            });
        }
        let mut updated = Vec::with_capacity(self.len());
        let mut total = 0.0;
        for (&w, &p) in self.weights.iter().zip(pass_probabilities) {
            if !p.is_finite() {
                return Err(Error::NonFinite("likelihood"));
            }
            let like = if datum { p } else { 1.0 - p };
            let v = w * like.clamp(0.0, 1.0);
            total += v;
            updated.push(v);
        }
        if !(total > 0.0) {
            return Err(Error::AllWeightsZero);
        }
        for v in &mut updated {
            *v /= total;
        }
        self.weights = updated;
        Ok(())
    }

    /// Bayes update with an exact per-particle likelihood.
    pub fn bayes_update<F>(&mut self, datum: bool, likelihood: F) -> Result<()>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let probs = self.map_particles(likelihood)?;
        self.update_with(datum, &probs)
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn is_uniform(&self, tol: f64) -> bool {
        self.max_uniform_deviation() <= tol
    }

    pub fn max_uniform_deviation(&self) -> f64 {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().map(|w| (w - u).abs()).fold(0.0, f64::max)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.dim];
        for (x, w) in self.iter() {
            for (m, v) in mu.iter_mut().zip(x) {
                *m += w * v;
            }
        }
        mu
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let d = self.dim;
        let mut cov = DMatrix::zeros(d, d);
        let mut diff = vec![0.0; d];
        for (x, w) in self.iter() {
            for k in 0..d {
                diff[k] = x[k] - mu[k];
            }
            for r in 0..d {
                let scaled = w * diff[r];
                for c in r..d {
                    cov[(r, c)] += scaled * diff[c];
                }
            }
        }
        for r in 0..d {
            for c in 0..r {
                cov[(r, c)] = cov[(c, r)];
            }
        }
        cov
    }

    /// Draws an index proportionally to the weights.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        // round-off left u above the final partial sum
        self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(self.len() - 1)
    }
}

pub fn effective_sample_size(cloud: &ParticleCloud) -> f64 {
    cloud.effective_sample_size()
}

pub fn posterior_mean(cloud: &ParticleCloud) -> Vec<f64> {
    cloud.mean()
}

pub fn posterior_cov(cloud: &ParticleCloud) -> DMatrix<f64> {
    cloud.covariance()
}

/// Bayes update returning the updated cloud.
pub fn bayes_update<F>(cloud: &ParticleCloud, datum: bool, likelihood: F) -> Result<ParticleCloud>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let mut out = cloud.clone();
    out.bayes_update(datum, likelihood)?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResampleConfig {
    /// Liu–West contraction `a ∈ (0, 1]`.
    pub a: f64,
    /// Resample when ESS drops below this fraction of the particle count.
    pub ess_threshold: f64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            a: 0.98,
            ess_threshold: 0.5,
        }
    }
}

impl ResampleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a <= 1.0) {
            return Err(Error::InvalidConfig(format!("Liu-West a must lie in (0,1], got {}", self.a)));
        }
        if !(self.ess_threshold > 0.0 && self.ess_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ESS threshold must lie in (0,1], got {}",
                self.ess_threshold
            )));
        }
        Ok(())
    }

    pub fn should_resample(&self, cloud: &ParticleCloud) -> bool {
        cloud.effective_sample_size() < self.ess_threshold * cloud.len() as f64
    }
}

/// Symmetric square-root factor `V·sqrt(max(Λ, 0))` of a covariance matrix.
fn covariance_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCovariance);
    }
    let eig = SymmetricEigen::new(cov.clone());
    let mut factor = eig.eigenvectors;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        factor.column_mut(k).scale_mut(s);
    }
    Ok(factor)
}

/// Liu–West resampling: ancestors drawn by weight, contracted towards the
/// mean by `a` and jittered with covariance `(1 − a²)Σ`.
pub fn liu_west_resample<R: Rng + ?Sized>(
    rng: &mut R,
    cloud: &ParticleCloud,
    cfg: &ResampleConfig,
) -> Result<ParticleCloud> {
    cfg.validate()?;
    let d = cloud.dim;
    let mu = cloud.mean();
    let cov = cloud.covariance();
    let jitter = (1.0 - cfg.a * cfg.a).max(0.0).sqrt();
    let factor = if jitter > 0.0 {
        Some(covariance_factor(&cov)?)
    } else if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCovariance);
    } else {
        None
    };
    let ancestors = WeightedIndex::new(&cloud.weights).map_err(|_| Error::AllWeightsZero)?;
    let mut particles = Vec::with_capacity(cloud.particles.len());
    let mut noise = DVector::zeros(d);
    for _ in 0..cloud.len() {
        let j = ancestors.sample(rng);
        let x = cloud.particle(j);
        match &factor {
            Some(l) => {
                for v in noise.iter_mut() {
                    *v = rng.sample::<f64, _>(StandardNormal);
                }
                let eps = l * &noise;
                for k in 0..d {
                    particles.push(x[k] + (1.0 - cfg.a) * (mu[k] - x[k]) + jitter * eps[k]);
                }
            }
            None => particles.extend_from_slice(x),
        }
    }
    ParticleCloud::uniform(d, particles)
}

/// How the SMC update obtains per-particle likelihoods.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum LikelihoodMode {
    #[default]
    Exact,
    /// Frequency estimate from `samples` Bernoulli draws per particle.
    Sampled { samples: u64 },
}

impl LikelihoodMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            LikelihoodMode::Sampled { samples: 0 } => {
                Err(Error::InvalidConfig("sampled likelihood needs at least one sample".into()))
            }
            _ => Ok(()),
        }
    }

    /// Pass probabilities for every particle under this mode. Sampled draws
    /// use one derived stream per particle, so results do not depend on how
    /// the work is split across threads.
    pub fn pass_probabilities<R, F>(&self, rng: &mut R, cloud: &ParticleCloud, likelihood: F) -> Result<Vec<f64>>
    where
        R: Rng + ?Sized,
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        match *self {
            LikelihoodMode::Exact => cloud.map_particles(likelihood),
            LikelihoodMode::Sampled { samples } => {
                let seed: u64 = rng.gen();
                cloud
                    .particles
                    .par_chunks_exact(cloud.dim)
                    .enumerate()
                    .map(|(i, x)| {
                        let p = likelihood(x)?;
                        let mut local = ChaCha8Rng::seed_from_u64(seed);
                        local.set_stream(i as u64);
                        let hits = Binomial::new(samples, p.clamp(0.0, 1.0))
                            .map_err(|_| Error::NonFinite("likelihood"))?
                            .sample(&mut local);
                        Ok(hits as f64 / samples as f64)
                    })
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud_1d(xs: &[f64], ws: &[f64]) -> ParticleCloud {
        ParticleCloud::from_weighted(1, xs.to_vec(), ws.to_vec()).unwrap()
    }

    #[test]
    fn uniform_likelihood_leaves_weights() {
        let mut c = cloud_1d(&[0.0, 1.0, 2.0], &[0.2, 0.3, 0.5]);
        let before = c.weights().to_vec();
        c.bayes_update(true, |_| Ok(0.4)).unwrap();
        for (a, b) in before.iter().zip(c.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn two_particle_update() {
        let mut c = cloud_1d(&[0.0, 1.0], &[0.5, 0.5]);
        c.bayes_update(true, |x| Ok(if x[0] == 0.0 { 0.8 } else { 0.2 })).unwrap();
        assert!((c.weights()[0] - 0.8).abs() < 1e-15);
        assert!((c.weights()[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn all_zero_update_is_rejected_and_harmless() {
        let mut c = cloud_1d(&[0.0, 1.0], &[0.5, 0.5]);
        let err = c.bayes_update(false, |_| Ok(1.0)).unwrap_err();
        assert!(matches!(err, Error::AllWeightsZero));
        assert_eq!(c.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn ess_examples() {
        assert!((cloud_1d(&[0.0, 1.0, 2.0, 3.0], &[1.0; 4]).effective_sample_size() - 4.0).abs() < 1e-12);
        assert!((cloud_1d(&[0.0, 1.0], &[1.0, 0.0]).effective_sample_size() - 1.0).abs() < 1e-12);
        let c = cloud_1d(&[0.0, 1.0, 2.0], &[0.5, 0.25, 0.25]);
        assert!((c.effective_sample_size() - 8.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn mean_and_covariance_examples() {
        let single = cloud_1d(&[1.5], &[1.0]);
        assert_eq!(single.mean(), vec![1.5]);
        assert_eq!(single.covariance()[(0, 0)], 0.0);
        let pair = cloud_1d(&[-1.0, 1.0], &[1.0, 1.0]);
        assert_eq!(pair.mean(), vec![0.0]);
        assert!((pair.covariance()[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn liu_west_without_contraction_copies_particles() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = ParticleCloud::from_weighted(2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], vec![0.1, 0.6, 0.3]).unwrap();
        let cfg = ResampleConfig { a: 1.0, ess_threshold: 0.5 };
        let out = liu_west_resample(&mut rng, &c, &cfg).unwrap();
        assert_eq!(out.len(), 3);
        for x in out.particles().chunks(2) {
            assert!([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]].iter().any(|p| p == x));
        }
        assert!((out.effective_sample_size() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn liu_west_keeps_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = ParticleCloud::uniform(2, [0.3, -0.7].repeat(5)).unwrap();
        let out = liu_west_resample(&mut rng, &c, &ResampleConfig::default()).unwrap();
        for x in out.particles().chunks(2) {
            assert!((x[0] - 0.3).abs() < 1e-15 && (x[1] + 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn liu_west_rejects_non_finite_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = ParticleCloud::uniform(1, vec![0.0, f64::INFINITY]).unwrap();
        assert!(matches!(
            liu_west_resample(&mut rng, &c, &ResampleConfig::default()),
            Err(Error::DegenerateCovariance)
        ));
    }

    #[test]
    fn resample_config_validation() {
        assert!(ResampleConfig { a: 0.0, ess_threshold: 0.5 }.validate().is_err());
        assert!(ResampleConfig { a: 0.5, ess_threshold: 1.5 }.validate().is_err());
        assert!(ResampleConfig::default().validate().is_ok());
    }

    #[test]
    fn sampled_mode_is_thread_independent() {
        let c = ParticleCloud::uniform(1, (0..200).map(|i| i as f64 / 200.0).collect()).unwrap();
        let mode = LikelihoodMode::Sampled { samples: 50 };
        let f = |x: &[f64]| Ok(x[0]);
        let a = mode.pass_probabilities(&mut ChaCha8Rng::seed_from_u64(4), &c, f).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| mode.pass_probabilities(&mut ChaCha8Rng::seed_from_u64(4), &c, f).unwrap());
        assert_eq!(a, b);
        assert!(a.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

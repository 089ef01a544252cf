//! Dual-cloud scanning: a uniformly weighted global cloud over every coupling
//! of the chain, and a short-lived weighted local cloud over the couplings
//! one window can see. The window sweeps the chain, learns locally and writes
//! the resampled local cloud back into the global one.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment_design::{pgh_design, place_window, truncation_time_cap};
use crate::inference::{liu_west_resample, LikelihoodMode, ParticleCloud, ResampleConfig};
use crate::ising_model::{
    likelihood_windowed_delta, num_pairs, sample_datum_local, CouplingVector, DecayEnvelope, PriorSpec, WindowLayout,
};

/// Tolerance on local weights accepted by [`GlobalCloud::merge_local`].
pub const UNIFORM_TOLERANCE: f64 = 1e-9;

/// Fresh experiment draws after a zero-likelihood update before the position
/// is abandoned.
pub const DEFAULT_MAX_RETRIES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSchedule {
    pub n: usize,
    pub a: usize,
    pub w: usize,
    pub experiments_per_scan: usize,
    pub positions: Vec<usize>,
}

impl ScanSchedule {
    /// Left-to-right sweep `0..=n−a` followed by the reverse sweep `a..=0`.
    pub fn standard(n: usize, a: usize, w: usize, experiments_per_scan: usize) -> Result<Self> {
        if a == 0 || a > n {
            return Err(Error::InvalidGeometry(format!("support of {a} sites on {n} sites")));
        }
        let last = n - a;
        let mut positions: Vec<usize> = (0..=last).collect();
        positions.extend((0..=a.min(last)).rev());
        Self::with_positions(n, a, w, experiments_per_scan, positions)
    }

    pub fn with_positions(
        n: usize,
        a: usize,
        w: usize,
        experiments_per_scan: usize,
        positions: Vec<usize>,
    ) -> Result<Self> {
        if a == 0 || w < a || a > n {
            return Err(Error::InvalidGeometry(format!("support {a}, window {w} on {n} sites")));
        }
        if let Some(&bad) = positions.iter().find(|&&p| p + a > n) {
            return Err(Error::InvalidGeometry(format!("position {bad} leaves the chain of {n} sites")));
        }
        Ok(Self {
            n,
            a,
            w,
            experiments_per_scan,
            positions,
        })
    }

    pub fn total_experiments(&self) -> usize {
        self.positions.len() * self.experiments_per_scan
    }
}

/// `N` full coupling vectors with implicit uniform weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalCloud {
    n: usize,
    dim: usize,
    particles: Vec<f64>,
}

impl GlobalCloud {
    pub fn from_particles(n: usize, particles: Vec<f64>) -> Result<Self> {
        let dim = num_pairs(n);
        if dim == 0 || particles.is_empty() || particles.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: particles.len(),
            });
        }
        Ok(Self { n, dim, particles })
    }

    pub fn from_prior<R: Rng + ?Sized>(rng: &mut R, prior: &PriorSpec, n: usize, count: usize) -> Result<Self> {
        prior.validate(n)?;
        let mut particles = Vec::with_capacity(count * num_pairs(n));
        for _ in 0..count {
            particles.extend(prior.sample(rng, n).into_values());
        }
        Self::from_particles(n, particles)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.particles.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particle(&self, k: usize) -> &[f64] {
        &self.particles[k * self.dim..(k + 1) * self.dim]
    }

    pub fn particles(&self) -> &[f64] {
        &self.particles
    }

    pub fn mean(&self) -> CouplingVector {
        let mut mu = vec![0.0; self.dim];
        for x in self.particles.chunks_exact(self.dim) {
            for (m, v) in mu.iter_mut().zip(x) {
                *m += v;
            }
        }
        let count = self.len() as f64;
        mu.iter_mut().for_each(|m| *m /= count);
        CouplingVector::from_values(self.n, mu).expect("mean of valid particles")
    }

    /// Restriction of every particle to the layout's local parameters,
    /// uniformly weighted.
    pub fn extract_local(&self, layout: &WindowLayout) -> Result<ParticleCloud> {
        let idx = layout.global_indices();
        let mut local = Vec::with_capacity(self.len() * idx.len());
        for x in self.particles.chunks_exact(self.dim) {
            local.extend(idx.iter().map(|&k| x[k]));
        }
        ParticleCloud::uniform(idx.len(), local)
    }

    /// Overwrites the local coordinates of particle `k` with those of local
    /// particle `π(k)` for a fresh uniform permutation `π`.
    pub fn merge_local<R: Rng + ?Sized>(
        &mut self,
        local: &ParticleCloud,
        layout: &WindowLayout,
        rng: &mut R,
    ) -> Result<()> {
        let deviation = local.max_uniform_deviation();
        if deviation > UNIFORM_TOLERANCE {
            return Err(Error::NonUniformLocal(deviation));
        }
        if local.len() != self.len() || local.dim() != layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: local.len(),
            });
        }
        let mut perm: Vec<usize> = (0..self.len()).collect();
        perm.shuffle(rng);
        let idx = layout.global_indices();
        for (x, &src) in self.particles.chunks_exact_mut(self.dim).zip(&perm) {
            for (&k, &v) in idx.iter().zip(local.particle(src)) {
                x[k] = v;
            }
        }
        Ok(())
    }
}

/// A system answering single-shot interactive likelihood experiments.
pub trait DataSource {
    /// One pass/fail outcome for inverting with `x_inv_local` on the layout's
    /// window after evolving for `t`.
    fn query(&mut self, layout: &WindowLayout, x_inv_local: &[f64], t: f64) -> Result<bool>;
}

/// An Ising chain with hidden couplings, sampled exactly.
pub struct IsingSystem<R> {
    x_true: CouplingVector,
    rng: R,
}

impl<R: Rng> IsingSystem<R> {
    pub fn new(x_true: CouplingVector, rng: R) -> Self {
        Self { x_true, rng }
    }

    /// The hidden couplings, for benchmarking only.
    pub fn truth(&self) -> &CouplingVector {
        &self.x_true
    }
}

impl<R: Rng> DataSource for IsingSystem<R> {
    fn query(&mut self, layout: &WindowLayout, x_inv_local: &[f64], t: f64) -> Result<bool> {
        sample_datum_local(&mut self.rng, &self.x_true, x_inv_local, layout, t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub resample: ResampleConfig,
    pub likelihood_mode: LikelihoodMode,
    /// Envelope used to cap evolution times; `None` leaves times uncapped.
    pub decay: Option<DecayEnvelope>,
    pub delta_trunc: f64,
    pub max_retries: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            resample: ResampleConfig::default(),
            likelihood_mode: LikelihoodMode::Exact,
            decay: Some(DecayEnvelope::hundredfold(1.0)),
            delta_trunc: 0.01,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }
}

/// One experiment in a scan. `experiment_index` counts experiments from the
/// start of the run; error columns compare the global posterior mean with the
/// hidden couplings and are `NaN` when no truth was supplied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub position: usize,
    pub experiment_index: usize,
    pub t: f64,
    pub ess: f64,
    pub l2_error: f64,
    pub l1_opnorm_bound: f64,
}

pub const TRACE_HEADER: [&str; 6] = ["position", "experiment_index", "t", "ess", "l2_error", "l1_opnorm_bound"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanTrace {
    pub rows: Vec<TraceRow>,
    /// Schedule slots abandoned after repeated zero-likelihood updates.
    pub aborted_slots: Vec<usize>,
    pub resamples: usize,
}

impl ScanTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record(TRACE_HEADER)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Error of the global posterior mean when the local coordinates are
/// replaced by the local cloud's mean.
struct ErrorTracker<'a> {
    truth: &'a CouplingVector,
    idx: Vec<usize>,
    outside_sq: f64,
    outside_abs: f64,
}

impl<'a> ErrorTracker<'a> {
    fn new(truth: &'a CouplingVector, global_mean: &CouplingVector, layout: &WindowLayout) -> Self {
        let idx = layout.global_indices().to_vec();
        let mut local = vec![false; truth.len()];
        idx.iter().for_each(|&k| local[k] = true);
        let (mut outside_sq, mut outside_abs) = (0.0, 0.0);
        for (k, (m, x)) in global_mean.values().iter().zip(truth.values()).enumerate() {
            if !local[k] {
                outside_sq += (m - x) * (m - x);
                outside_abs += (m - x).abs();
            }
        }
        Self {
            truth,
            idx,
            outside_sq,
            outside_abs,
        }
    }

    fn errors(&self, local_mean: &[f64]) -> (f64, f64) {
        let (mut sq, mut abs) = (self.outside_sq, self.outside_abs);
        for (&k, m) in self.idx.iter().zip(local_mean) {
            let d = m - self.truth.values()[k];
            sq += d * d;
            abs += d.abs();
        }
        (sq.sqrt(), abs)
    }
}

fn local_update<R: Rng + ?Sized>(
    rng: &mut R,
    system: &mut dyn DataSource,
    local: &mut ParticleCloud,
    layout: &WindowLayout,
    cap: Option<f64>,
    cfg: &ScanConfig,
) -> Result<f64> {
    let mut last = Error::AllWeightsZero;
    for _ in 0..=cfg.max_retries {
        let design = pgh_design(rng, local, *layout.window(), cap)?;
        let datum = system.query(layout, &design.x_inv, design.t)?;
        let x_inv = &design.x_inv;
        let probs = cfg.likelihood_mode.pass_probabilities(rng, local, |x| {
            let delta: Vec<f64> = x.iter().zip(x_inv).map(|(a, b)| a - b).collect();
            likelihood_windowed_delta(&delta, layout, design.t)
        })?;
        match local.update_with(datum, &probs) {
            Ok(()) => return Ok(design.t),
            Err(Error::AllWeightsZero) => last = Error::AllWeightsZero,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Runs the schedule against `system`, updating `global` in place.
///
/// `truth` feeds only the trace's error columns. A position whose updates keep
/// vanishing is abandoned: its local cloud is restored to the pre-scan state
/// before merging and the slot is listed in [`ScanTrace::aborted_slots`].
pub fn run_scan<R: Rng + ?Sized>(
    rng: &mut R,
    system: &mut dyn DataSource,
    global: &mut GlobalCloud,
    schedule: &ScanSchedule,
    cfg: &ScanConfig,
    truth: Option<&CouplingVector>,
) -> Result<ScanTrace> {
    cfg.resample.validate()?;
    cfg.likelihood_mode.validate()?;
    if global.n() != schedule.n {
        return Err(Error::DimensionMismatch {
            expected: schedule.n,
            got: global.n(),
        });
    }
    if global.len() < 2 {
        return Err(Error::DegeneratePrior);
    }
    let n = schedule.n;
    let mut trace = ScanTrace::default();
    let mut counter = 0;
    for (slot, &position) in schedule.positions.iter().enumerate() {
        let win = place_window(n, schedule.a, schedule.w, position)?;
        let layout = WindowLayout::new(n, win)?;
        let cap = match cfg.decay {
            Some(decay) => Some(truncation_time_cap(n, &win, decay, cfg.delta_trunc, 1.0)?).filter(|c| c.is_finite()),
            None => None,
        };
        let tracker = truth.map(|x| ErrorTracker::new(x, &global.mean(), &layout));
        let mut local = global.extract_local(&layout)?;
        let before = local.clone();
        for _ in 0..schedule.experiments_per_scan {
            let t = match local_update(rng, system, &mut local, &layout, cap, cfg) {
                Ok(t) => t,
                Err(Error::AllWeightsZero) => {
                    log::warn!("abandoning position {position} (slot {slot}): every particle was ruled out");
                    trace.aborted_slots.push(slot);
                    local = before.clone();
                    break;
                }
                Err(e) => return Err(e),
            };
            let ess = local.effective_sample_size();
            let (l2_error, l1_opnorm_bound) = tracker.as_ref().map_or((f64::NAN, f64::NAN), |tr| tr.errors(&local.mean()));
            trace.rows.push(TraceRow {
                position,
                experiment_index: counter,
                t,
                ess,
                l2_error,
                l1_opnorm_bound,
            });
            counter += 1;
            if cfg.resample.should_resample(&local) {
                local = liu_west_resample(rng, &local, &cfg.resample)?;
                trace.resamples += 1;
            }
        }
        if local.max_uniform_deviation() > 0.0 {
            local = liu_west_resample(rng, &local, &cfg.resample)?;
            trace.resamples += 1;
        }
        global.merge_local(&local, &layout, rng)?;
    }
    Ok(trace)
}

/// Least-squares slope of `ln(l2_error)` against `experiment_index`, negated
/// so that decaying errors give a positive rate. Rows with non-positive or
/// non-finite errors are skipped.
pub fn fit_decay_rate(rows: &[TraceRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.l2_error.is_finite() && r.l2_error > 0.0)
        .map(|r| (r.experiment_index as f64, r.l2_error.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let count = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / count;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / count;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ising_model::{pair_index, Window};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_global(n: usize, count: usize, seed: u64) -> GlobalCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GlobalCloud::from_prior(&mut rng, &PriorSpec::default(), n, count).unwrap()
    }

    #[test]
    fn standard_schedule_shape() {
        let s = ScanSchedule::standard(12, 4, 8, 10).unwrap();
        assert_eq!(s.positions, vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 4, 3, 2, 1, 0]);
        assert_eq!(ScanSchedule::standard(50, 4, 8, 1).unwrap().positions.len(), 52);
        assert!(ScanSchedule::with_positions(12, 4, 8, 1, vec![9]).is_err());
    }

    #[test]
    fn extract_whole_chain_gives_all_pairs() {
        let g = small_global(5, 3, 1);
        let layout = WindowLayout::new(5, Window::new(5, 0, 5, 0, 5).unwrap()).unwrap();
        let local = g.extract_local(&layout).unwrap();
        assert_eq!(local.dim(), 10);
        assert_eq!(local.particle(2), g.particle(2));
    }

    #[test]
    fn extract_with_window_equal_to_support() {
        let layout = WindowLayout::new(6, Window::new(6, 1, 4, 1, 4).unwrap()).unwrap();
        let expected: Vec<usize> = [(1, 2), (1, 3), (2, 3)].iter().map(|&(i, j)| pair_index(6, i, j)).collect();
        assert_eq!(layout.global_indices(), expected.as_slice());
    }

    #[test]
    fn merge_touches_only_local_coordinates() {
        let mut g = small_global(8, 50, 2);
        let before = g.clone();
        let layout = WindowLayout::new(8, Window::new(8, 2, 6, 3, 5).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let local = liu_west_resample(&mut rng, &g.extract_local(&layout).unwrap(), &ResampleConfig::default()).unwrap();
        g.merge_local(&local, &layout, &mut rng).unwrap();
        let idx = layout.global_indices();
        for k in 0..g.len() {
            for (c, (&a, &b)) in g.particle(k).iter().zip(before.particle(k)).enumerate() {
                if !idx.contains(&c) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
        let gm = g.mean();
        let lm = local.mean();
        for (&k, m) in idx.iter().zip(&lm) {
            assert!((gm.values()[k] - m).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_of_unchanged_local_is_a_shuffle() {
        let mut g = small_global(6, 20, 4);
        let before = g.clone();
        let layout = WindowLayout::new(6, Window::new(6, 0, 4, 1, 3).unwrap()).unwrap();
        let local = g.extract_local(&layout).unwrap();
        g.merge_local(&local, &layout, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let key = |c: &GlobalCloud| {
            let mut rows: Vec<Vec<u64>> = (0..c.len())
                .map(|k| layout.global_indices().iter().map(|&i| c.particle(k)[i].to_bits()).collect())
                .collect();
            rows.sort();
            rows
        };
        assert_eq!(key(&g), key(&before));
    }

    #[test]
    fn merge_rejects_weighted_local() {
        let mut g = small_global(4, 2, 6);
        let layout = WindowLayout::new(4, Window::new(4, 0, 4, 1, 3).unwrap()).unwrap();
        let local = ParticleCloud::from_weighted(layout.dim(), vec![0.0; 2 * layout.dim()], vec![0.9, 0.1]).unwrap();
        let err = g.merge_local(&local, &layout, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::NonUniformLocal(_)));
    }

    #[test]
    fn zero_experiments_only_shuffle() {
        let mut g = small_global(6, 30, 7);
        let before_mean = g.mean();
        let truth = PriorSpec::default().sample(&mut ChaCha8Rng::seed_from_u64(8), 6);
        let mut system = IsingSystem::new(truth.clone(), ChaCha8Rng::seed_from_u64(9));
        let schedule = ScanSchedule::standard(6, 2, 4, 0).unwrap();
        let trace = run_scan(
            &mut ChaCha8Rng::seed_from_u64(10),
            &mut system,
            &mut g,
            &schedule,
            &ScanConfig::default(),
            Some(&truth),
        )
        .unwrap();
        assert!(trace.rows.is_empty());
        for (a, b) in g.mean().values().iter().zip(before_mean.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn short_scan_improves_small_chain() {
        let n = 6;
        let truth = PriorSpec::default().sample(&mut ChaCha8Rng::seed_from_u64(11), n);
        let mut g = small_global(n, 1000, 12);
        let start = g.mean().sub(&truth).unwrap().l2_norm();
        let mut system = IsingSystem::new(truth.clone(), ChaCha8Rng::seed_from_u64(13));
        let schedule = ScanSchedule::standard(n, 2, 4, 40).unwrap();
        let trace = run_scan(
            &mut ChaCha8Rng::seed_from_u64(14),
            &mut system,
            &mut g,
            &schedule,
            &ScanConfig::default(),
            Some(&truth),
        )
        .unwrap();
        assert_eq!(trace.rows.len(), schedule.total_experiments());
        assert_eq!(g.len(), 1000);
        let end = g.mean().sub(&truth).unwrap().l2_norm();
        assert!(end < 0.5 * start, "{start} -> {end}");
        let last = trace.rows.last().unwrap();
        assert!((last.l2_error - end).abs() < 0.05 * start);
    }

    #[test]
    fn decay_fit_recovers_planted_rate() {
        let rows: Vec<TraceRow> = (0..100)
            .map(|i| TraceRow {
                position: 0,
                experiment_index: i,
                t: 1.0,
                ess: 1.0,
                l2_error: 0.3 * (-0.006 * i as f64).exp(),
                l1_opnorm_bound: 0.0,
            })
            .collect();
        assert!((fit_decay_rate(&rows).unwrap() - 0.006).abs() < 1e-12);
        assert_eq!(fit_decay_rate(&rows[..1]), None);
    }

    #[test]
    fn trace_csv_header_is_fixed() {
        let mut buf = Vec::new();
        ScanTrace::default().write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), TRACE_HEADER.join(","));
    }
}

//! Experiment choice for interactive likelihood evaluation: where to put the
//! simulator window, which hypothesis to invert with, and for how long to
//! evolve.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds;
use crate::error::{Error, Result};
use crate::inference::ParticleCloud;
use crate::ising_model::{DecayEnvelope, Window};

/// Draw attempts before falling back to a perturbed pair.
pub const PGH_MAX_ATTEMPTS: usize = 100;

/// Per-coordinate perturbation used when every attempt drew equal vectors.
pub const PGH_PERTURBATION: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDesign {
    pub window: Window,
    /// Inversion hypothesis on the window's local parameters.
    pub x_inv: Vec<f64>,
    pub t: f64,
    /// Number of swap rounds; 1 for commuting models.
    pub r: u32,
}

fn draw_pair<R: Rng + ?Sized>(rng: &mut R, cloud: &ParticleCloud) -> (usize, usize) {
    let i = cloud.sample_index(rng);
    loop {
        let j = cloud.sample_index(rng);
        if j != i {
            return (i, j);
        }
    }
}

/// Particle guess heuristic: invert with a posterior draw `x` and evolve for
/// `1/‖x − x'‖₁` where `x'` is a second, distinct draw. The time is clipped
/// to `cap`.
pub fn pgh_design<R: Rng + ?Sized>(
    rng: &mut R,
    cloud: &ParticleCloud,
    window: Window,
    cap: Option<f64>,
) -> Result<ExperimentDesign> {
    if cloud.weights().iter().filter(|&&w| w > 0.0).count() < 2 {
        return Err(Error::DegeneratePrior);
    }
    if let Some(c) = cap {
        if !(c > 0.0) {
            return Err(Error::InvalidConfig(format!("time cap must be positive, got {c}")));
        }
    }
    let mut distance = 0.0;
    let mut first = 0;
    for _ in 0..PGH_MAX_ATTEMPTS {
        let (i, j) = draw_pair(rng, cloud);
        first = i;
        distance = cloud
            .particle(i)
            .iter()
            .zip(cloud.particle(j))
            .map(|(a, b)| (a - b).abs())
            .sum();
        if distance > 0.0 {
            break;
        }
    }
    if !(distance > 0.0) {
        log::warn!("particle guess heuristic drew identical hypotheses {PGH_MAX_ATTEMPTS} times");
        distance = PGH_PERTURBATION * cloud.dim() as f64;
    }
    if !distance.is_finite() {
        return Err(Error::NonFinite("hypothesis distance"));
    }
    let t_pgh = 1.0 / distance;
    Ok(ExperimentDesign {
        window,
        x_inv: cloud.particle(first).to_vec(),
        t: cap.map_or(t_pgh, |c| t_pgh.min(c)),
        r: 1,
    })
}

/// Upper bound on the couplings joining the window's support to sites
/// outside the window, under a decay envelope. Each side of the window that
/// has sites beyond it contributes one geometric tail.
pub fn support_leakage_norm(n: usize, win: &Window, decay: DecayEnvelope) -> f64 {
    let a = win.a();
    let mut total = 0.0;
    if win.lo > 0 {
        let gap = win.a_lo - win.lo;
        total += bounds::window_interaction_norm_exp(a, a + 2 * gap, decay.b, decay.alpha);
    }
    if win.hi < n {
        let gap = win.hi - win.a_hi;
        total += bounds::window_interaction_norm_exp(a, a + 2 * gap, decay.b, decay.alpha);
    }
    total
}

/// Longest evolution time for which dropping the out-of-window couplings
/// moves the measured observable by at most `delta_trunc`.
pub fn truncation_time_cap(n: usize, win: &Window, decay: DecayEnvelope, delta_trunc: f64, a_norm: f64) -> Result<f64> {
    if !(delta_trunc > 0.0) {
        return Err(Error::InvalidConfig(format!("truncation tolerance must be positive, got {delta_trunc}")));
    }
    Ok(bounds::max_time_commuting(delta_trunc, a_norm, support_leakage_norm(n, win, decay)))
}

/// Window of width `min(w, n)` centered on the support `[position, position + a)`
/// and clamped to the chain.
pub fn place_window(n: usize, a: usize, w: usize, position: usize) -> Result<Window> {
    if a == 0 || w < a || position + a > n {
        return Err(Error::InvalidGeometry(format!(
            "support of {a} sites at {position} with window {w} on {n} sites"
        )));
    }
    let width = w.min(n);
    let lo = position.saturating_sub((width - a) / 2).min(n - width);
    Window::new(n, lo, lo + width, position, position + a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn win() -> Window {
        Window::new(4, 0, 4, 1, 3).unwrap()
    }

    #[test]
    fn pgh_inverse_l1_distance_and_cap() {
        let cloud = ParticleCloud::uniform(3, vec![0.1, 0.2, 0.3, 0.1, 0.7, 0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = pgh_design(&mut rng, &cloud, win(), None).unwrap();
        assert!((d.t - 2.0).abs() < 1e-12);
        assert_eq!(d.r, 1);
        let capped = pgh_design(&mut rng, &cloud, win(), Some(1.0)).unwrap();
        assert_eq!(capped.t, 1.0);
    }

    #[test]
    fn pgh_needs_two_live_particles() {
        let cloud = ParticleCloud::from_weighted(1, vec![0.0, 1.0], vec![1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(pgh_design(&mut rng, &cloud, win(), None), Err(Error::DegeneratePrior)));
    }

    #[test]
    fn pgh_perturbs_collapsed_cloud() {
        let cloud = ParticleCloud::uniform(2, vec![0.5; 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = pgh_design(&mut rng, &cloud, win(), None).unwrap();
        assert!(d.t.is_finite() && d.t > 1e11);
    }

    #[test]
    fn pgh_time_tracks_cloud_width() {
        let median_t = |sd: f64, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, sd).unwrap();
            let data: Vec<f64> = (0..4 * 500).map(|_| normal.sample(&mut rng)).collect();
            let cloud = ParticleCloud::uniform(4, data).unwrap();
            let mut ts: Vec<f64> = (0..1000)
                .map(|_| pgh_design(&mut rng, &cloud, win(), None).unwrap().t)
                .collect();
            ts.sort_by(f64::total_cmp);
            ts[500]
        };
        let ratio = median_t(0.01, 2) / median_t(0.1, 1);
        assert!((ratio - 10.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn place_window_examples() {
        assert_eq!(place_window(50, 4, 8, 0).unwrap(), Window::new(50, 0, 8, 0, 4).unwrap());
        assert_eq!(place_window(50, 4, 8, 23).unwrap(), Window::new(50, 21, 29, 23, 27).unwrap());
        assert_eq!(place_window(50, 4, 8, 46).unwrap(), Window::new(50, 42, 50, 46, 50).unwrap());
        assert_eq!(place_window(6, 4, 8, 1).unwrap(), Window::new(6, 0, 6, 1, 5).unwrap());
        assert!(place_window(50, 4, 3, 0).is_err());
        assert!(place_window(50, 4, 8, 47).is_err());
    }

    #[test]
    fn truncation_cap_examples() {
        let decay = DecayEnvelope::hundredfold(1.0);
        let whole = Window::new(8, 0, 8, 2, 6).unwrap();
        assert_eq!(truncation_time_cap(8, &whole, decay, 0.01, 1.0).unwrap(), f64::INFINITY);
        let narrow = Window::new(50, 21, 29, 23, 27).unwrap();
        let wide = Window::new(50, 20, 30, 23, 27).unwrap();
        let ratio = truncation_time_cap(50, &wide, decay, 0.01, 1.0).unwrap()
            / truncation_time_cap(50, &narrow, decay, 0.01, 1.0).unwrap();
        assert!((ratio - 100.0).abs() < 1e-9);
        assert!(truncation_time_cap(50, &narrow, decay, 0.0, 1.0).is_err());
    }

    #[test]
    fn leakage_bound_dominates_actual_couplings() {
        let decay = DecayEnvelope::hundredfold(1.0);
        let n = 30;
        let w = Window::new(n, 10, 18, 12, 16).unwrap();
        let mut actual = 0.0;
        for i in w.a_lo..w.a_hi {
            for j in (0..n).filter(|&j| !w.contains(j)) {
                actual += decay.at(i.abs_diff(j));
            }
        }
        let bound = support_leakage_norm(n, &w, decay);
        assert!(actual <= bound && bound < 5.0 * actual, "{actual} vs {bound}");
    }
}

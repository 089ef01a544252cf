//! Closed-form error and complexity bounds.
//!
//! Everything here is plain arithmetic. Operator norms and commutator norms
//! are supplied by the caller: exact values from [`crate::densesim`] on small
//! systems, or the decay-envelope estimates below on large ones.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// A bound evaluation with its inputs echoed for auditing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub inputs: BTreeMap<String, f64>,
    pub value: f64,
    pub formula: String,
}

impl BoundReport {
    pub fn new(name: &str, formula: &str, inputs: &[(&str, f64)], value: f64) -> Self {
        Self {
            name: name.to_string(),
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            value,
            formula: formula.to_string(),
        }
    }
}

/// `‖A‖(e^{2ht} − 1)`: drift of a local observable when the couplings from
/// its support to the outside of the simulator window (norm `h`) are dropped
/// from a commuting Hamiltonian.
pub fn commuting_truncation_bound(a_norm: f64, h_int_a: f64, t: f64) -> f64 {
    a_norm * (2.0 * h_int_a * t).exp_m1()
}

/// Longest evolution time keeping [`commuting_truncation_bound`] below `delta`.
pub fn max_time_commuting(delta: f64, a_norm: f64, h_int_a: f64) -> f64 {
    if h_int_a == 0.0 {
        return f64::INFINITY;
    }
    (delta / a_norm).ln_1p() / (2.0 * h_int_a)
}

fn window_gap(a: usize, w: usize) -> usize {
    (w - a) / 2
}

/// Upper bound on the norm of the couplings between an `a`-site support and
/// the sites more than `⌊(w−a)/2⌋` away, for coupling strength
/// `f(d) = b e^{−α(d−1)}` at distance `d`.
pub fn window_interaction_norm_exp(a: usize, w: usize, b: f64, alpha: f64) -> f64 {
    let m = window_gap(a, w) as f64;
    a as f64 * b * (-m * alpha).exp() / (-(-alpha).exp_m1())
}

/// The same quantity for polynomial decay `f(d) = b d^{−α}`, `α > 1`,
/// bounding the tail by its first term plus the integral of the rest.
pub fn window_interaction_norm_poly(a: usize, w: usize, b: f64, alpha: f64) -> f64 {
    let first = (window_gap(a, w) + 1) as f64;
    a as f64 * b * (first.powf(-alpha) + first.powf(1.0 - alpha) / (alpha - 1.0))
}

/// `abα / ((m+1)^α (α−1))` with `m = ⌊(w−a)/2⌋`.
///
/// This closed form is sometimes quoted for the polynomial tail but it is
/// smaller than the tail sum itself (for `α = 2`, `m = 1`: 0.5 against
/// `π²/6 − 1 ≈ 0.645`), so it is not a valid bound. Kept for comparison only.
pub fn window_interaction_norm_poly_quoted(a: usize, w: usize, b: f64, alpha: f64) -> f64 {
    let first = (window_gap(a, w) + 1) as f64;
    a as f64 * b * alpha / (first.powf(alpha) * (alpha - 1.0))
}

/// Norms entering the non-commuting truncation bound.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoncommutingNorms {
    /// `‖[H_in, Λ]‖` with `Λ = H_in − H_−`.
    pub comm_in_lambda: f64,
    /// `‖[H_int, H_in]‖`.
    pub comm_int_in: f64,
    /// `‖H_int∩A‖`.
    pub h_int_a: f64,
    /// `‖H_int∖A‖`.
    pub h_int_not_a: f64,
    /// `‖H_out‖`.
    pub h_out: f64,
}

/// Error of the `r`-swap protocol with a window simulator, given
/// Lieb–Robinson constants `(s, μ)` for `Λ` and the distance `dist` from the
/// support to the window edge.
#[allow(clippy::too_many_arguments)]
pub fn noncommuting_truncation_bound(
    norms: &NoncommutingNorms,
    a_norm: f64,
    a_sites: f64,
    s: f64,
    mu: f64,
    dist: f64,
    t: f64,
    r: u32,
) -> f64 {
    let r = r.max(1) as f64;
    let trotter = (norms.comm_in_lambda + norms.comm_int_in) * a_norm * t * t / r;
    let direct = 2.0 * norms.h_int_a * a_norm * t;
    let spread = 2.0
        * norms.h_int_not_a
        * a_norm
        * a_sites
        * t
        * (-mu * dist).exp()
        * (2.0 * s * t.abs()).exp_m1()
        * (2.0 * (norms.h_out + norms.h_int_not_a) * t / r).exp();
    trotter + direct + spread
}

/// Evolution time guaranteeing error `delta` in the many-swap limit when
/// the Lieb–Robinson cone stays inside the window.
#[allow(clippy::too_many_arguments)]
pub fn lr_time_bound(
    delta: f64,
    a_norm: f64,
    h_int_a: f64,
    h_int_not_a: f64,
    a_sites: f64,
    mu: f64,
    w: usize,
    a: usize,
) -> f64 {
    let leak = h_int_a + 2.0 * h_int_not_a * a_sites * (-mu * (w - a) as f64 / 4.0).exp();
    if leak == 0.0 {
        return f64::INFINITY;
    }
    delta / (2.0 * a_norm * leak)
}

/// Fisher information bound `4‖∂_i H‖‖∂_j H‖t²`.
pub fn fisher_bound(grad_norm_i: f64, grad_norm_j: f64, t: f64) -> f64 {
    4.0 * grad_norm_i * grad_norm_j * t * t
}

/// Error after `L` bootstrapping generations from per-step maxima.
pub fn bootstrap_error_bound(
    generations: u32,
    gamma_max: f64,
    kappa_max: f64,
    e_max: f64,
    gplus_max: f64,
    h_max: f64,
) -> f64 {
    let l = generations as f64;
    l * gamma_max * ((l - 1.0) * (kappa_max - 1.0 + e_max * gplus_max)).exp() * h_max
}

/// Norms of one bootstrapping generation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapStep {
    /// `‖GG⁺ − 1‖`.
    pub projector_defect: f64,
    /// `‖E‖`, the learning error of the control map.
    pub e_norm: f64,
    pub g_norm: f64,
    pub gplus_norm: f64,
}

impl BootstrapStep {
    pub fn gamma(&self) -> f64 {
        self.projector_defect + self.e_norm * self.gplus_norm
    }

    pub fn kappa(&self) -> f64 {
        self.g_norm * self.gplus_norm
    }
}

/// The telescoped error sum `Σ_j Γ_j Π_{k<j}(κ_k + ‖E_k‖‖G_k⁺‖) · h_max`
/// that [`bootstrap_error_bound`] majorizes.
pub fn bootstrap_error_telescoped(steps: &[BootstrapStep], h_max: f64) -> f64 {
    let mut total = 0.0;
    let mut growth = 1.0;
    for step in steps {
        total += step.gamma() * growth;
        growth *= step.kappa() + step.e_norm * step.gplus_norm;
    }
    total * h_max
}

/// Experiments per learning run sufficient to keep the bootstrapping error
/// below `delta` when the learning error decays as `e^{−γN}`.
pub fn bootstrap_nexp_bound(
    generations: u32,
    kappa_max: f64,
    gplus_max: f64,
    h_max: f64,
    delta: f64,
    gamma: f64,
) -> f64 {
    let l = generations as f64;
    ((l - 1.0) * kappa_max + (l * gplus_max * h_max.max(1.0) / delta).ln()) / gamma
}

/// Largest swap count whose accumulated swap errors stay below `delta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapCount {
    pub r: u64,
    /// Set when the unconstrained value exceeded the cap.
    pub capped: bool,
}

pub fn swap_error_r_max(delta: f64, delta_swap: f64, cap: u64) -> SwapCount {
    let raw = ((delta / delta_swap + 1.0) / 2.0).floor();
    if !(raw < cap as f64) {
        return SwapCount { r: cap.max(1), capped: true };
    }
    SwapCount {
        r: (raw as u64).max(1),
        capped: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commuting_pair_round_trips() {
        assert_eq!(commuting_truncation_bound(1.0, 0.0, 3.0), 0.0);
        assert_eq!(commuting_truncation_bound(1.0, 0.3, 0.0), 0.0);
        let t = max_time_commuting(0.01, 1.0, 0.005);
        assert!((t - 0.995_033_085_316_808_3).abs() < 1e-12);
        assert!((commuting_truncation_bound(1.0, 0.005, t) - 0.01).abs() < 1e-12);
        assert_eq!(max_time_commuting(0.01, 1.0, 0.0), f64::INFINITY);
    }

    #[test]
    fn window_norm_examples() {
        let exp = window_interaction_norm_exp(1, 3, 1.0, std::f64::consts::LN_2);
        assert!((exp - 1.0).abs() < 1e-15);
        assert!((window_interaction_norm_poly_quoted(1, 3, 1.0, 2.0) - 0.5).abs() < 1e-15);
        assert!((window_interaction_norm_poly(1, 3, 1.0, 2.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn noncommuting_reduces_when_couplings_vanish() {
        let zero = NoncommutingNorms::default();
        assert_eq!(noncommuting_truncation_bound(&zero, 1.0, 4.0, 1.0, 1.0, 2.0, 0.7, 3), 0.0);
        let norms = NoncommutingNorms {
            comm_in_lambda: 0.3,
            comm_int_in: 0.2,
            h_int_a: 0.1,
            h_int_not_a: 0.05,
            h_out: 1.0,
        };
        assert_eq!(noncommuting_truncation_bound(&norms, 1.0, 4.0, 1.0, 1.0, 2.0, 0.0, 3), 0.0);
    }

    #[test]
    fn lr_time_reduces_to_direct_term() {
        assert!((lr_time_bound(0.01, 2.0, 0.5, 0.0, 4.0, 1.0, 8, 4) - 0.005).abs() < 1e-15);
        assert!(lr_time_bound(0.01, 1.0, 0.1, 0.1, 4.0, 1.0, 12, 4) > lr_time_bound(0.01, 1.0, 0.1, 0.1, 4.0, 1.0, 8, 4));
    }

    #[test]
    fn fisher_examples() {
        assert_eq!(fisher_bound(1.0, 1.0, 1.0), 4.0);
        assert_eq!(fisher_bound(1.0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn bootstrap_bound_examples() {
        assert!((bootstrap_error_bound(1, 0.3, 5.0, 0.2, 2.0, 10.0) - 3.0).abs() < 1e-12);
        assert!((bootstrap_error_bound(4, 0.3, 1.0, 0.0, 2.0, 10.0) - 12.0).abs() < 1e-12);
        assert_eq!(bootstrap_nexp_bound(1, 3.0, 1.0, 1.0, 1.0, 1.0), 0.0);
        let gap = bootstrap_nexp_bound(2, 3.0, 1.5, 2.0, 0.05, 0.5) - bootstrap_nexp_bound(2, 3.0, 1.5, 2.0, 0.1, 0.5);
        assert!((gap - std::f64::consts::LN_2 / 0.5).abs() < 1e-12);
    }

    #[test]
    fn swap_count_examples() {
        assert_eq!(swap_error_r_max(0.01, 0.01, 1000), SwapCount { r: 1, capped: false });
        assert_eq!(swap_error_r_max(0.09, 0.01, 1000), SwapCount { r: 5, capped: false });
        assert_eq!(swap_error_r_max(0.01, 0.0, 1000), SwapCount { r: 1000, capped: true });
        assert_eq!(swap_error_r_max(0.001, 0.01, 1000).r, 1);
    }
}

//! Ising chain parameterization, priors and IQLE likelihoods.
//!
//! The model is `H(x) = Σ_{i<j} x_{ij} Z_i Z_j` on a line of `n` sites. An
//! IQLE experiment prepares `|+⟩^⊗n`, evolves under the true couplings for a
//! time `t`, inverts the evolution on a window of sites under a hypothesis
//! `x_inv` and measures the projector `(|+⟩⟨+|)^⊗a` on the observable support.
//!
//! Because every term is diagonal, tracing out the sites outside the
//! observable support gives the closed form
//!
//! ```text
//! Pr = 4^{-a} Σ_{u,v ∈ {±1}^a} cos(t φ(u,v)) Π_{j∉A} cos(t Σ_{i∈A} δ_ij (u_i − v_i))
//! φ(u,v) = Σ_{i<i'∈A} δ_ii' (u_i u_i' − v_i v_i')
//! ```
//!
//! where `δ` is the coupling mismatch left after inversion. Couplings between
//! two sites outside the support cancel exactly and never enter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest observable support accepted by the likelihood evaluators.
pub const MAX_OBSERVABLE_SITES: usize = 20;

/// Round-off allowance before a likelihood is clamped into `[0, 1]`.
pub const CLAMP_TOLERANCE: f64 = 1e-9;

/// Exact operator norms are enumerated up to this many sites.
pub const OP_NORM_ENUMERATION_CUTOFF: usize = 24;

/// Index of pair `(i, j)`, `i < j`, in the lexicographic pair ordering.
#[inline]
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

pub fn num_pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Iterator over all pairs `(i, j)`, `i < j < n`, in index order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

/// Pairwise ZZ coupling strengths of an `n`-site chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingVector {
    n: usize,
    values: Vec<f64>,
}

impl CouplingVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; num_pairs(n)],
        }
    }

    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGeometry(format!("need at least 2 sites, got {n}")));
        }
        if values.len() != num_pairs(n) {
            return Err(Error::DimensionMismatch {
                expected: num_pairs(n),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coupling vector"));
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.values[pair_index(self.n, i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.values[pair_index(self.n, i, j)] = value;
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Self { n: self.n, values })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Self { n: self.n, values })
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Values at the given pair indices, in the given order.
    pub fn restrict(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&k| self.values[k]).collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A simulator window `[lo, hi)` with the observable support `[a_lo, a_hi)`
/// nested inside it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub lo: usize,
    pub hi: usize,
    pub a_lo: usize,
    pub a_hi: usize,
}

impl Window {
    pub fn new(n: usize, lo: usize, hi: usize, a_lo: usize, a_hi: usize) -> Result<Self> {
        if !(lo <= a_lo && a_lo < a_hi && a_hi <= hi && hi <= n) {
            return Err(Error::InvalidGeometry(format!(
                "window [{lo},{hi}) with support [{a_lo},{a_hi}) on {n} sites"
            )));
        }
        Ok(Self { lo, hi, a_lo, a_hi })
    }

    pub fn width(&self) -> usize {
        self.hi - self.lo
    }

    pub fn a(&self) -> usize {
        self.a_hi - self.a_lo
    }

    pub fn contains(&self, site: usize) -> bool {
        (self.lo..self.hi).contains(&site)
    }

    pub fn in_support(&self, site: usize) -> bool {
        (self.a_lo..self.a_hi).contains(&site)
    }

    /// Pair lies inside the window and touches the observable support.
    pub fn is_local_pair(&self, i: usize, j: usize) -> bool {
        self.contains(i) && self.contains(j) && (self.in_support(i) || self.in_support(j))
    }
}

/// Where a local parameter sits relative to the observable support.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairRole {
    /// Both endpoints in the support; positions are offsets into the support.
    Support(usize, usize),
    /// One endpoint in the support (offset) and one in the rest of the window
    /// (offset into [`WindowLayout::environment`]).
    Boundary(usize, usize),
}

/// Parameter layout of a window: the pairs inside the window that touch the
/// observable support, which are exactly the parameters the windowed
/// likelihood depends on.
#[derive(Clone, Debug)]
pub struct WindowLayout {
    n: usize,
    window: Window,
    pairs: Vec<(usize, usize)>,
    global: Vec<usize>,
    roles: Vec<PairRole>,
    environment: Vec<usize>,
}

impl WindowLayout {
    pub fn new(n: usize, window: Window) -> Result<Self> {
        Window::new(n, window.lo, window.hi, window.a_lo, window.a_hi)?;
        let environment: Vec<usize> = (window.lo..window.hi).filter(|&s| !window.in_support(s)).collect();
        let mut out = Self {
            n,
            window,
            pairs: Vec::new(),
            global: Vec::new(),
            roles: Vec::new(),
            environment,
        };
        for (i, j) in pairs(n) {
            if !window.is_local_pair(i, j) {
                continue;
            }
            let role = match (window.in_support(i), window.in_support(j)) {
                (true, true) => PairRole::Support(i - window.a_lo, j - window.a_lo),
                (true, false) => PairRole::Boundary(i - window.a_lo, out.env_offset(j)),
                (false, true) => PairRole::Boundary(j - window.a_lo, out.env_offset(i)),
                (false, false) => unreachable!(),
            };
            out.pairs.push((i, j));
            out.global.push(pair_index(n, i, j));
            out.roles.push(role);
        }
        Ok(out)
    }

    fn env_offset(&self, site: usize) -> usize {
        self.environment.iter().position(|&s| s == site).expect("site in window")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn dim(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Global pair indices of the local parameters.
    pub fn global_indices(&self) -> &[usize] {
        &self.global
    }

    pub fn roles(&self) -> &[PairRole] {
        &self.roles
    }

    /// Window sites outside the observable support.
    pub fn environment(&self) -> &[usize] {
        &self.environment
    }
}

/// Decay envelope `b·e^{-α(d-1)}` of a coupling at distance `d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayEnvelope {
    pub b: f64,
    pub alpha: f64,
}

impl DecayEnvelope {
    /// The `10^{-2(d-1)}` envelope of the numerical experiments.
    pub fn hundredfold(b: f64) -> Self {
        Self {
            b,
            alpha: 2.0 * std::f64::consts::LN_10,
        }
    }

    pub fn at(&self, distance: usize) -> f64 {
        self.b * (-self.alpha * (distance as f64 - 1.0)).exp()
    }
}

fn default_scale() -> f64 {
    1.0
}

fn default_drive() -> f64 {
    10.0
}

/// Prior over coupling vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorSpec {
    /// `x_ij ~ b·unif(0,1)·10^{-2(|i-j|-1)}`.
    ExponentialDecayUniform {
        #[serde(default = "default_scale")]
        b: f64,
    },
    /// Crosstalk from control `p`: `drive` on the pair `(p, p+1)` plus the
    /// exponential-decay-uniform background on every pair.
    CrosstalkControl {
        #[serde(default = "default_scale")]
        b: f64,
        control: usize,
        #[serde(default = "default_drive")]
        drive: f64,
    },
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::ExponentialDecayUniform { b: 1.0 }
    }
}

impl PriorSpec {
    pub fn envelope(&self) -> DecayEnvelope {
        match *self {
            PriorSpec::ExponentialDecayUniform { b } | PriorSpec::CrosstalkControl { b, .. } => {
                DecayEnvelope::hundredfold(b)
            }
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let b = match *self {
            PriorSpec::ExponentialDecayUniform { b } => b,
            PriorSpec::CrosstalkControl { b, control, drive } => {
                if control + 1 >= n {
                    return Err(Error::InvalidConfig(format!(
                        "control {control} has no pair ({control},{}) on {n} sites",
                        control + 1
                    )));
                }
                if !drive.is_finite() {
                    return Err(Error::NonFinite("prior drive"));
                }
                b
            }
        };
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::InvalidConfig(format!("prior scale b must be positive, got {b}")));
        }
        Ok(())
    }

    fn offset(&self, i: usize, j: usize) -> f64 {
        match *self {
            PriorSpec::CrosstalkControl { control, drive, .. } if i == control && j == control + 1 => drive,
            _ => 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> CouplingVector {
        let env = self.envelope();
        let values = pairs(n)
            .map(|(i, j)| self.offset(i, j) + rng.gen::<f64>() * env.at(j - i))
            .collect();
        CouplingVector { n, values }
    }

    pub fn mean(&self, n: usize) -> CouplingVector {
        let env = self.envelope();
        let values = pairs(n).map(|(i, j)| self.offset(i, j) + 0.5 * env.at(j - i)).collect();
        CouplingVector { n, values }
    }
}

/// Spin value of bit `k` of configuration `u`: bit 0 ↦ +1, bit 1 ↦ −1.
#[inline]
fn spin(u: usize, k: usize) -> f64 {
    1.0 - 2.0 * ((u >> k) & 1) as f64
}

/// Residual couplings of one experiment, grouped by how they act on the
/// observable support.
struct Residual {
    a: usize,
    /// `(i, i', δ)` for pairs inside the support.
    support: Vec<(usize, usize, f64)>,
    /// For each environment site, `(i, δ)` couplings to support sites.
    environment: Vec<Vec<(usize, f64)>>,
}

impl Residual {
    fn check(&self, t: f64) -> Result<()> {
        if self.a > MAX_OBSERVABLE_SITES {
            return Err(Error::ObservableTooLarge(self.a));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("evolution time"));
        }
        if t < 0.0 {
            return Err(Error::InvalidGeometry(format!("negative evolution time {t}")));
        }
        let finite = self.support.iter().all(|c| c.2.is_finite())
            && self.environment.iter().flatten().all(|c| c.1.is_finite());
        if !finite {
            return Err(Error::NonFinite("coupling mismatch"));
        }
        Ok(())
    }

    /// `e(u) = Σ δ_ii' u_i u_i'` for every support configuration.
    fn support_energies(&self) -> Vec<f64> {
        (0..1usize << self.a)
            .map(|u| self.support.iter().map(|&(i, k, d)| d * spin(u, i) * spin(u, k)).sum())
            .collect()
    }

    /// `f_j(u) = Σ_i δ_ij u_i`, row-major `[u][j]`.
    fn fields(&self) -> Vec<f64> {
        let m = self.environment.len();
        let mut out = vec![0.0; (1usize << self.a) * m];
        for u in 0..1usize << self.a {
            for (j, couplings) in self.environment.iter().enumerate() {
                out[u * m + j] = couplings.iter().map(|&(i, d)| d * spin(u, i)).sum();
            }
        }
        out
    }

    fn probability(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        let m = self.environment.len();
        let pairs_cost = (1u128 << (2 * self.a)) / 2 * (m as u128 + 1);
        let env_cost = if m < 64 { (1u128 << m) * (1u128 << self.a) * 2 } else { u128::MAX };
        let raw = if env_cost < pairs_cost {
            self.probability_by_environment(t)
        } else {
            self.probability_by_pairs(t)
        };
        Ok(clamp_probability(raw))
    }

    /// The product form summed over support configuration pairs.
    fn probability_by_pairs(&self, t: f64) -> f64 {
        let a = self.a;
        let m = self.environment.len();
        let e = self.support_energies();
        let f = self.fields();
        let dim = 1usize << a;
        // (u, v) and (-u, -v) contribute equally, so fix u_0 = +1.
        let mut sum = 0.0;
        for u in (0..dim).filter(|u| u & 1 == 0) {
            let fu = &f[u * m..(u + 1) * m];
            for v in 0..dim {
                if u == v {
                    sum += 1.0;
                    continue;
                }
                let fv = &f[v * m..(v + 1) * m];
                let mut term = (t * (e[u] - e[v])).cos();
                for (x, y) in fu.iter().zip(fv) {
                    term *= (t * (x - y)).cos();
                }
                sum += term;
            }
        }
        2.0 * sum / (dim * dim) as f64
    }

    /// Enumerates environment spins and sums squared support amplitudes.
    fn probability_by_environment(&self, t: f64) -> f64 {
        let a = self.a;
        let m = self.environment.len();
        let dim = 1usize << a;
        let e = self.support_energies();
        let f = self.fields();
        if m == 0 {
            let (re, im) = e.iter().fold((0.0, 0.0), |(re, im), &en| {
                let (s, c) = (t * en).sin_cos();
                (re + c, im - s)
            });
            return (re * re + im * im) / (dim * dim) as f64;
        }
        // Global spin flip maps (u, z) to (−u, −z) at equal energy, so the
        // last environment spin is pinned to +1 and the sum doubled.
        let free = m - 1;
        let mut z = vec![1.0f64; m];
        let mut energy: Vec<f64> = (0..dim)
            .map(|u| e[u] + f[u * m..(u + 1) * m].iter().sum::<f64>())
            .collect();
        let mut total = 0.0;
        for step in 0..1usize << free {
            if step > 0 {
                let j = step.trailing_zeros() as usize;
                for (u, en) in energy.iter_mut().enumerate() {
                    *en -= 2.0 * z[j] * f[u * m + j];
                }
                z[j] = -z[j];
            }
            let (re, im) = energy.iter().fold((0.0, 0.0), |(re, im), &en| {
                let (s, c) = (t * en).sin_cos();
                (re + c, im - s)
            });
            total += re * re + im * im;
        }
        2.0 * total / ((1usize << m) * dim * dim) as f64
    }
}

fn clamp_probability(p: f64) -> f64 {
    debug_assert!(
        (-CLAMP_TOLERANCE..=1.0 + CLAMP_TOLERANCE).contains(&p),
        "likelihood {p} outside round-off tolerance"
    );
    p.clamp(0.0, 1.0)
}

fn check_vector(x: &CouplingVector, n: usize, what: &'static str) -> Result<()> {
    if x.n != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.n });
    }
    if x.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

/// Full-system IQLE likelihood with the inversion hypothesis given as values
/// on the local parameters of `layout`.
pub fn likelihood_full_local(
    x_true: &CouplingVector,
    x_inv_local: &[f64],
    layout: &WindowLayout,
    t: f64,
) -> Result<f64> {
    check_vector(x_true, layout.n, "true couplings")?;
    if x_inv_local.len() != layout.dim() {
        return Err(Error::DimensionMismatch {
            expected: layout.dim(),
            got: x_inv_local.len(),
        });
    }
    let win = layout.window;
    let n = layout.n;
    let a = win.a();
    let mut support = Vec::new();
    let mut environment: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut env_slot = vec![usize::MAX; n];
    for j in (0..n).filter(|&s| !win.in_support(s)) {
        env_slot[j] = environment.len();
        environment.push(Vec::with_capacity(a));
    }
    let mut inv = vec![0.0; num_pairs(n)];
    for (&k, &v) in layout.global.iter().zip(x_inv_local) {
        inv[k] = v;
    }
    for i in win.a_lo..win.a_hi {
        for j in 0..n {
            if j == i || (win.in_support(j) && j < i) {
                continue;
            }
            let (p, q) = if i < j { (i, j) } else { (j, i) };
            let k = pair_index(n, p, q);
            let d = if win.contains(j) {
                x_true.values[k] - inv[k]
            } else {
                x_true.values[k]
            };
            if win.in_support(j) {
                support.push((i - win.a_lo, j - win.a_lo, d));
            } else {
                environment[env_slot[j]].push((i - win.a_lo, d));
            }
        }
    }
    if x_inv_local.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("inversion hypothesis"));
    }
    Residual { a, support, environment }.probability(t)
}

/// Full-system IQLE likelihood.
///
/// `x_inv` is only read on pairs inside the window; pairs inside the window
/// that do not touch the support cancel and are ignored.
pub fn likelihood_full(x_true: &CouplingVector, x_inv: &CouplingVector, win: &Window, t: f64) -> Result<f64> {
    check_vector(x_inv, x_true.n, "inversion hypothesis")?;
    let layout = WindowLayout::new(x_true.n, *win)?;
    let local = x_inv.restrict(layout.global_indices());
    likelihood_full_local(x_true, &local, &layout, t)
}

/// Windowed likelihood from the local coupling mismatch `x_model − x_inv`
/// laid out as in `layout`. This is the per-particle likelihood of the SMC
/// update.
pub fn likelihood_windowed_delta(delta: &[f64], layout: &WindowLayout, t: f64) -> Result<f64> {
    if delta.len() != layout.dim() {
        return Err(Error::DimensionMismatch {
            expected: layout.dim(),
            got: delta.len(),
        });
    }
    let mut support = Vec::new();
    let mut environment = vec![Vec::new(); layout.environment.len()];
    for (&role, &d) in layout.roles.iter().zip(delta) {
        match role {
            PairRole::Support(i, k) => support.push((i, k, d)),
            PairRole::Boundary(i, j) => environment[j].push((i, d)),
        }
    }
    Residual {
        a: layout.window.a(),
        support,
        environment,
    }
    .probability(t)
}

/// Likelihood predicted by a simulator restricted to the window: couplings
/// from the support to sites outside the window are neglected.
pub fn likelihood_windowed(
    x_model: &CouplingVector,
    x_inv: &CouplingVector,
    win: &Window,
    t: f64,
) -> Result<f64> {
    check_vector(x_model, x_model.n, "model couplings")?;
    check_vector(x_inv, x_model.n, "inversion hypothesis")?;
    let layout = WindowLayout::new(x_model.n, *win)?;
    let delta: Vec<f64> = layout
        .global
        .iter()
        .map(|&k| x_model.values[k] - x_inv.values[k])
        .collect();
    likelihood_windowed_delta(&delta, &layout, t)
}

/// Draws one IQLE outcome from the true system: `true` (pass) with
/// probability [`likelihood_full_local`]. Consumes exactly one uniform draw.
pub fn sample_datum_local<R: Rng + ?Sized>(
    rng: &mut R,
    x_true: &CouplingVector,
    x_inv_local: &[f64],
    layout: &WindowLayout,
    t: f64,
) -> Result<bool> {
    let p = likelihood_full_local(x_true, x_inv_local, layout, t)?;
    Ok(rng.gen::<f64>() < p)
}

pub fn sample_datum<R: Rng + ?Sized>(
    rng: &mut R,
    x_true: &CouplingVector,
    x_inv: &CouplingVector,
    win: &Window,
    t: f64,
) -> Result<bool> {
    let p = likelihood_full(x_true, x_inv, win, t)?;
    Ok(rng.gen::<f64>() < p)
}

pub fn param_error_l2(x: &CouplingVector, y: &CouplingVector) -> Result<f64> {
    Ok(x.sub(y)?.l2_norm())
}

/// Operator norm of a diagonal Hamiltonian difference, or its L1 upper
/// bound above the enumeration cutoff.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpNorm {
    pub value: f64,
    pub exact: bool,
}

/// `max_z |Σ (x−y)_ij z_i z_j|`, enumerated with a Gray code over
/// `2^{n-1}` spin assignments (`z` and `−z` give equal energies).
pub fn op_norm_diag(x: &CouplingVector, y: &CouplingVector) -> Result<OpNorm> {
    let d = x.sub(y)?;
    let n = d.n;
    if n > OP_NORM_ENUMERATION_CUTOFF {
        return Ok(OpNorm {
            value: d.l1_norm(),
            exact: false,
        });
    }
    let mut z = vec![1.0f64; n];
    let mut field = vec![0.0f64; n];
    for (i, j) in pairs(n) {
        let v = d.get(i, j);
        field[i] += v;
        field[j] += v;
    }
    let mut energy: f64 = d.values.iter().sum();
    let mut best = energy.abs();
    for step in 1..1usize << (n - 1) {
        let k = step.trailing_zeros() as usize;
        energy -= 2.0 * z[k] * field[k];
        for j in 0..n {
            if j != k {
                field[j] -= 2.0 * z[k] * d.get(k, j);
            }
        }
        z[k] = -z[k];
        best = best.max(energy.abs());
    }
    Ok(OpNorm { value: best, exact: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_couplings(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CouplingVector {
        let values = (0..num_pairs(n)).map(|_| scale * (2.0 * rng.gen::<f64>() - 1.0)).collect();
        CouplingVector::from_values(n, values).unwrap()
    }

    #[test]
    fn pair_index_is_lexicographic() {
        let n = 7;
        for (k, (i, j)) in pairs(n).enumerate() {
            assert_eq!(pair_index(n, i, j), k);
        }
        assert_eq!(num_pairs(n), 21);
    }

    #[test]
    fn rejects_bad_vectors() {
        assert!(CouplingVector::from_values(3, vec![0.0; 2]).is_err());
        assert!(CouplingVector::from_values(3, vec![0.0, f64::NAN, 1.0]).is_err());
        assert!(CouplingVector::from_values(1, vec![]).is_err());
    }

    #[test]
    fn perfect_inversion_passes_with_certainty() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 8;
        let win = Window::new(n, 2, 6, 3, 5).unwrap();
        let mut x = random_couplings(&mut rng, n, 1.0);
        // cut every coupling from the support to the outside of the window
        for i in 3..5 {
            for j in (0..n).filter(|&j| !win.contains(j)) {
                x.set(i, j, 0.0);
            }
        }
        for t in [0.3, 1.0, 7.5] {
            assert!((likelihood_full(&x, &x, &win, t).unwrap() - 1.0).abs() < 1e-12);
            assert!((likelihood_windowed(&x, &x, &win, t).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_time_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 6;
        let win = Window::new(n, 0, 4, 1, 3).unwrap();
        let x = random_couplings(&mut rng, n, 2.0);
        let y = random_couplings(&mut rng, n, 2.0);
        assert_eq!(likelihood_full(&x, &y, &win, 0.0).unwrap(), 1.0);
        assert_eq!(likelihood_windowed(&x, &y, &win, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn single_support_pair_closed_form() {
        // a = 2 with one coupling: Pr = (1 + cos(2δt)) / 2.
        let n = 2;
        let win = Window::new(n, 0, 2, 0, 2).unwrap();
        let mut x = CouplingVector::zeros(n);
        x.set(0, 1, 0.37);
        let y = CouplingVector::zeros(n);
        for t in [0.1f64, 0.9, 2.4] {
            let expected = 0.5 * (1.0 + (2.0 * 0.37 * t).cos());
            let got = likelihood_windowed(&x, &y, &win, t).unwrap();
            assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
        }
    }

    #[test]
    fn rejects_oversized_support_and_bad_time() {
        let n = 22;
        let win = Window::new(n, 0, 22, 0, 21).unwrap();
        let x = CouplingVector::zeros(n);
        assert!(matches!(
            likelihood_windowed(&x, &x, &win, 1.0),
            Err(Error::ObservableTooLarge(21))
        ));
        let small = Window::new(4, 0, 4, 1, 3).unwrap();
        let y = CouplingVector::zeros(4);
        assert!(likelihood_full(&y, &y, &small, f64::INFINITY).is_err());
        assert!(likelihood_full(&y, &y, &small, -1.0).is_err());
    }

    #[test]
    fn both_summation_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..40 {
            let a = 1 + trial % 4;
            let m = trial % 6;
            let support = (0..a)
                .flat_map(|i| (i + 1..a).map(move |k| (i, k)))
                .map(|(i, k)| (i, k, rng.gen::<f64>() - 0.5))
                .collect();
            let environment = (0..m)
                .map(|_| (0..a).map(|i| (i, rng.gen::<f64>() - 0.5)).collect())
                .collect();
            let r = Residual { a, support, environment };
            let t = 3.0 * rng.gen::<f64>();
            let p1 = r.probability_by_pairs(t);
            let p2 = r.probability_by_environment(t);
            assert!((p1 - p2).abs() < 1e-12, "a={a} m={m}: {p1} vs {p2}");
        }
    }

    #[test]
    fn datum_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 2;
        let win = Window::new(n, 0, 2, 0, 2).unwrap();
        let zero = CouplingVector::zeros(n);
        let mut x = CouplingVector::zeros(n);
        // 2δt = π gives Pr = 0
        x.set(0, 1, std::f64::consts::FRAC_PI_2);
        for _ in 0..1000 {
            assert!(sample_datum(&mut rng, &zero, &zero, &win, 1.0).unwrap());
            assert!(!sample_datum(&mut rng, &x, &zero, &win, 1.0).unwrap());
        }
    }

    #[test]
    fn datum_frequency_matches_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 5;
        let win = Window::new(n, 0, 4, 1, 3).unwrap();
        let x = random_couplings(&mut rng, n, 0.5);
        let y = random_couplings(&mut rng, n, 0.5);
        let t = 1.3;
        let p = likelihood_full(&x, &y, &win, t).unwrap();
        let draws = 100_000;
        let hits = (0..draws).filter(|_| sample_datum(&mut rng, &x, &y, &win, t).unwrap()).count();
        let sigma = (p * (1.0 - p) / draws as f64).sqrt();
        let freq = hits as f64 / draws as f64;
        assert!((freq - p).abs() <= 3.0 * sigma, "freq {freq} p {p} sigma {sigma}");
    }

    #[test]
    fn l2_error_examples() {
        let n = 4;
        let x = CouplingVector::zeros(n);
        let mut y = CouplingVector::zeros(n);
        assert_eq!(param_error_l2(&x, &y).unwrap(), 0.0);
        y.set(0, 2, 3.0);
        assert_eq!(param_error_l2(&x, &y).unwrap(), 3.0);
        y.set(1, 3, -4.0);
        assert_eq!(param_error_l2(&x, &y).unwrap(), 5.0);
        assert!(param_error_l2(&x, &CouplingVector::zeros(5)).is_err());
    }

    #[test]
    fn op_norm_examples() {
        let n = 5;
        let x = CouplingVector::zeros(n);
        assert_eq!(op_norm_diag(&x, &x).unwrap().value, 0.0);
        let mut y = CouplingVector::zeros(n);
        y.set(1, 4, -0.25);
        let norm = op_norm_diag(&x, &y).unwrap();
        assert!(norm.exact);
        assert!((norm.value - 0.25).abs() < 1e-15);
    }

    #[test]
    fn op_norm_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 6;
        let x = random_couplings(&mut rng, n, 1.0);
        let y = CouplingVector::zeros(n);
        let mut brute: f64 = 0.0;
        for z in 0..1usize << n {
            let e: f64 = pairs(n).map(|(i, j)| x.get(i, j) * spin(z, i) * spin(z, j)).sum();
            brute = brute.max(e.abs());
        }
        let got = op_norm_diag(&x, &y).unwrap();
        assert!((got.value - brute).abs() < 1e-12);
        assert!(got.value <= x.l1_norm() + 1e-12);
    }

    #[test]
    fn op_norm_falls_back_to_l1_bound() {
        let n = OP_NORM_ENUMERATION_CUTOFF + 1;
        let mut x = CouplingVector::zeros(n);
        x.set(0, 1, 1.0);
        x.set(3, 9, -2.0);
        let got = op_norm_diag(&x, &CouplingVector::zeros(n)).unwrap();
        assert!(!got.exact);
        assert_eq!(got.value, 3.0);
    }

    #[test]
    fn priors_respect_envelopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 6;
        let prior = PriorSpec::CrosstalkControl { b: 1.0, control: 2, drive: 10.0 };
        prior.validate(n).unwrap();
        for _ in 0..100 {
            let x = prior.sample(&mut rng, n);
            for (i, j) in pairs(n) {
                let cap = 10f64.powi(-2 * (j as i32 - i as i32 - 1));
                let v = x.get(i, j) - if (i, j) == (2, 3) { 10.0 } else { 0.0 };
                assert!((0.0..cap).contains(&v));
            }
        }
        assert!((prior.mean(n).get(2, 3) - 10.5).abs() < 1e-15);
        assert!((prior.mean(n).get(0, 2) - 0.005).abs() < 1e-15);
        assert!(PriorSpec::CrosstalkControl { b: 1.0, control: 5, drive: 10.0 }.validate(n).is_err());
    }

    #[test]
    fn layout_matches_direct_pair_predicate() {
        // n=6, a=2, w=4, observable at 1: window [0,4), support [1,3)
        let win = Window::new(6, 0, 4, 1, 3).unwrap();
        let layout = WindowLayout::new(6, win).unwrap();
        let mut got: Vec<_> = layout.pairs().to_vec();
        got.sort();
        assert_eq!(got, vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]);
        assert_eq!(layout.environment(), &[0, 3]);
    }
}

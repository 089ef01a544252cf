//! Exact dense simulation of small qubit chains.
//!
//! Statevector routines accept up to [`STATE_CAP`] qubits; anything that
//! builds full operators (propagators of non-diagonal Hamiltonians,
//! Heisenberg-picture observables, spectral norms) is limited to
//! [`OPERATOR_CAP`]. Qubit `k` is bit `k` of a basis-state index, with bit
//! value 0 for the `+1` eigenstate of `Z`.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds;
use crate::error::{Error, Result};
use crate::ising_model::{pairs, CouplingVector, Window, MAX_OBSERVABLE_SITES};

pub type C64 = Complex<f64>;

pub const STATE_CAP: usize = 12;
pub const OPERATOR_CAP: usize = 10;

/// Slack allowed in the per-step recursion check for floating-point error.
pub const RECURSION_SLACK: f64 = 1e-10;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

fn check_cap(qubits: usize, cap: usize) -> Result<()> {
    if qubits > cap {
        return Err(Error::CapExceeded { qubits, cap });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

/// `coeff · P` for a Pauli word `P` stored as `(x, z)` bit masks: `X` sets
/// the x bit, `Z` the z bit and `Y` both.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliTerm {
    pub coeff: f64,
    pub x_mask: u64,
    pub z_mask: u64,
}

impl PauliTerm {
    pub fn new(coeff: f64, ops: &[(usize, Pauli)]) -> Self {
        let (mut x_mask, mut z_mask) = (0, 0);
        for &(site, p) in ops {
            let bit = 1u64 << site;
            match p {
                Pauli::I => {}
                Pauli::X => x_mask |= bit,
                Pauli::Y => {
                    x_mask |= bit;
                    z_mask |= bit
                }
                Pauli::Z => z_mask |= bit,
            }
        }
        Self { coeff, x_mask, z_mask }
    }

    /// Term from a word such as `"ZX1"`; `1` and `I` both mean identity.
    pub fn from_word(coeff: f64, word: &str) -> Result<Self> {
        let mut ops = Vec::new();
        for (site, c) in word.chars().enumerate() {
            let p = match c {
                'I' | '1' => Pauli::I,
                'X' => Pauli::X,
                'Y' => Pauli::Y,
                'Z' => Pauli::Z,
                other => return Err(Error::InvalidConfig(format!("unknown Pauli label {other:?}"))),
            };
            ops.push((site, p));
        }
        Ok(Self::new(coeff, &ops))
    }

    pub fn zz(coeff: f64, i: usize, j: usize) -> Self {
        Self::new(coeff, &[(i, Pauli::Z), (j, Pauli::Z)])
    }

    pub fn x(coeff: f64, i: usize) -> Self {
        Self::new(coeff, &[(i, Pauli::X)])
    }

    pub fn support(&self) -> u64 {
        self.x_mask | self.z_mask
    }

    pub fn is_diagonal(&self) -> bool {
        self.x_mask == 0
    }

    /// `P|b⟩ = phase·|b ⊕ x⟩`, without the coefficient.
    #[inline]
    pub fn act(&self, b: usize) -> (usize, C64) {
        let sign = if ((b as u64) & self.z_mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        let phase = match (self.x_mask & self.z_mask).count_ones() % 4 {
            0 => C64::new(sign, 0.0),
            1 => C64::new(0.0, sign),
            2 => C64::new(-sign, 0.0),
            _ => C64::new(0.0, -sign),
        };
        (b ^ self.x_mask as usize, phase)
    }
}

/// A real linear combination of Pauli words on `n` qubits.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PauliTermList {
    pub n: usize,
    pub terms: Vec<PauliTerm>,
}

impl PauliTermList {
    pub fn new(n: usize) -> Self {
        Self { n, terms: Vec::new() }
    }

    pub fn with_terms(n: usize, terms: Vec<PauliTerm>) -> Result<Self> {
        if let Some(t) = terms.iter().find(|t| t.support() >> n != 0) {
            return Err(Error::InvalidGeometry(format!("term support {:#b} exceeds {n} qubits", t.support())));
        }
        if terms.iter().any(|t| !t.coeff.is_finite()) {
            return Err(Error::NonFinite("Pauli coefficient"));
        }
        Ok(Self { n, terms })
    }

    /// `Σ x_ij Z_i Z_j`.
    pub fn ising(x: &CouplingVector) -> Self {
        let terms = pairs(x.n()).map(|(i, j)| PauliTerm::zz(x.get(i, j), i, j)).collect();
        Self { n: x.n(), terms }
    }

    /// `Σ x_ij Z_i Z_j + Σ h_i X_i`.
    pub fn transverse_ising(x: &CouplingVector, fields: &[f64]) -> Result<Self> {
        if fields.len() != x.n() {
            return Err(Error::DimensionMismatch {
                expected: x.n(),
                got: fields.len(),
            });
        }
        let mut h = Self::ising(x);
        h.terms.extend(fields.iter().enumerate().map(|(i, &f)| PauliTerm::x(f, i)));
        Ok(h)
    }

    pub fn push(&mut self, term: PauliTerm) {
        self.terms.push(term);
    }

    pub fn is_diagonal(&self) -> bool {
        self.terms.iter().all(PauliTerm::is_diagonal)
    }

    pub fn filter(&self, keep: impl Fn(&PauliTerm) -> bool) -> Self {
        Self {
            n: self.n,
            terms: self.terms.iter().copied().filter(|t| keep(t)).collect(),
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.terms.extend_from_slice(&other.terms);
        out
    }

    pub fn minus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.terms.extend(other.terms.iter().map(|t| PauliTerm { coeff: -t.coeff, ..*t }));
        out
    }

    /// Diagonal of a diagonal Hamiltonian.
    pub fn diagonal(&self) -> Result<Vec<f64>> {
        check_cap(self.n, STATE_CAP)?;
        if !self.is_diagonal() {
            return Err(Error::InvalidConfig("Hamiltonian is not diagonal".into()));
        }
        let dim = 1usize << self.n;
        Ok((0..dim)
            .map(|b| self.terms.iter().map(|t| t.coeff * t.act(b).1.re).sum())
            .collect())
    }

    pub fn matrix(&self) -> Result<DMatrix<C64>> {
        check_cap(self.n, OPERATOR_CAP)?;
        let dim = 1usize << self.n;
        let mut m = DMatrix::from_element(dim, dim, ZERO);
        for t in &self.terms {
            for b in 0..dim {
                let (row, phase) = t.act(b);
                m[(row, b)] += phase * t.coeff;
            }
        }
        Ok(m)
    }

    pub fn apply(&self, state: &DVector<C64>) -> Result<DVector<C64>> {
        check_cap(self.n, STATE_CAP)?;
        let mut out = DVector::from_element(state.len(), ZERO);
        for t in &self.terms {
            for (b, &amp) in state.iter().enumerate() {
                let (row, phase) = t.act(b);
                out[row] += phase * amp * t.coeff;
            }
        }
        Ok(out)
    }
}

/// Terms of a Hamiltonian grouped by where they sit relative to a window.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub inside: PauliTermList,
    pub outside: PauliTermList,
    pub int_a: PauliTermList,
    pub int_not_a: PauliTermList,
}

fn range_mask(lo: usize, hi: usize) -> u64 {
    if hi - lo >= 64 {
        return u64::MAX;
    }
    ((1u64 << (hi - lo)) - 1) << lo
}

pub fn partition_terms(h: &PauliTermList, win: &Window) -> Partition {
    let wmask = range_mask(win.lo, win.hi);
    let amask = range_mask(win.a_lo, win.a_hi);
    let empty = PauliTermList::new(h.n);
    let mut out = Partition {
        inside: empty.clone(),
        outside: empty.clone(),
        int_a: empty.clone(),
        int_not_a: empty,
    };
    for &t in &h.terms {
        let s = t.support();
        let part = if s & !wmask == 0 {
            &mut out.inside
        } else if s & wmask == 0 {
            &mut out.outside
        } else if s & amask != 0 {
            &mut out.int_a
        } else {
            &mut out.int_not_a
        };
        part.push(t);
    }
    out
}

/// Eigendecomposition `H = V diag(λ) V†` of a Hermitian operator, or its
/// diagonal when `H` is diagonal.
#[derive(Clone, Debug)]
pub enum Spectrum {
    Diagonal(Vec<f64>),
    Dense { values: Vec<f64>, vectors: DMatrix<C64> },
}

impl Spectrum {
    pub fn of(h: &PauliTermList) -> Result<Self> {
        if h.is_diagonal() {
            return Ok(Spectrum::Diagonal(h.diagonal()?));
        }
        Ok(Self::of_matrix(h.matrix()?))
    }

    pub fn of_matrix(m: DMatrix<C64>) -> Self {
        let eig = SymmetricEigen::new(m);
        Spectrum::Dense {
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        }
    }

    /// `e^{−iHt}`.
    pub fn propagator(&self, t: f64) -> Unitary {
        match self {
            Spectrum::Diagonal(e) => Unitary::Diagonal(e.iter().map(|&v| (-I * v * t).exp()).collect()),
            Spectrum::Dense { values, vectors } => {
                let mut scaled = vectors.clone();
                for (k, &v) in values.iter().enumerate() {
                    let phase = (-I * v * t).exp();
                    scaled.column_mut(k).iter_mut().for_each(|c| *c *= phase);
                }
                Unitary::Dense(&scaled * vectors.adjoint())
            }
        }
    }
}

/// A unitary kept diagonal when possible.
#[derive(Clone, Debug)]
pub enum Unitary {
    Diagonal(Vec<C64>),
    Dense(DMatrix<C64>),
}

impl Unitary {
    pub fn identity(n: usize) -> Self {
        Unitary::Diagonal(vec![ONE; 1 << n])
    }

    pub fn dim(&self) -> usize {
        match self {
            Unitary::Diagonal(d) => d.len(),
            Unitary::Dense(m) => m.nrows(),
        }
    }

    pub fn matrix(&self) -> DMatrix<C64> {
        match self {
            Unitary::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            Unitary::Dense(m) => m.clone(),
        }
    }

    pub fn adjoint(&self) -> Self {
        match self {
            Unitary::Diagonal(d) => Unitary::Diagonal(d.iter().map(|c| c.conj()).collect()),
            Unitary::Dense(m) => Unitary::Dense(m.adjoint()),
        }
    }

    /// `self · other`.
    pub fn then_apply(&self, other: &Unitary) -> Unitary {
        match (self, other) {
            (Unitary::Diagonal(a), Unitary::Diagonal(b)) => {
                Unitary::Diagonal(a.iter().zip(b).map(|(x, y)| x * y).collect())
            }
            _ => Unitary::Dense(self.matrix() * other.matrix()),
        }
    }

    pub fn apply(&self, state: &DVector<C64>) -> DVector<C64> {
        match self {
            Unitary::Diagonal(d) => state.component_mul(&DVector::from_column_slice(d)),
            Unitary::Dense(m) => m * state,
        }
    }

    /// `U† A U`.
    pub fn conjugate(&self, a: &DMatrix<C64>) -> DMatrix<C64> {
        match self {
            Unitary::Diagonal(d) => DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| d[r].conj() * a[(r, c)] * d[c]),
            Unitary::Dense(m) => m.adjoint() * a * m,
        }
    }
}

/// `e^{−iHt}ψ₀`.
pub fn evolve_state(h: &PauliTermList, t: f64, psi0: &DVector<C64>) -> Result<DVector<C64>> {
    if psi0.len() != 1 << h.n {
        return Err(Error::DimensionMismatch {
            expected: 1 << h.n,
            got: psi0.len(),
        });
    }
    if !h.is_diagonal() {
        check_cap(h.n, OPERATOR_CAP)?;
    }
    Ok(Spectrum::of(h)?.propagator(t).apply(psi0))
}

/// `e^{iHt} A e^{−iHt}`.
pub fn heisenberg(h: &PauliTermList, t: f64, a: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    check_cap(h.n, OPERATOR_CAP)?;
    Ok(Spectrum::of(h)?.propagator(t).conjugate(a))
}

/// `|+⟩^{⊗n}`.
pub fn plus_state(n: usize) -> Result<DVector<C64>> {
    check_cap(n, STATE_CAP)?;
    let dim = 1usize << n;
    Ok(DVector::from_element(dim, C64::new((dim as f64).sqrt().recip(), 0.0)))
}

/// Projector onto `|+⟩` on every qubit in `[lo, hi)`, identity elsewhere.
pub fn plus_projector(n: usize, lo: usize, hi: usize) -> Result<DMatrix<C64>> {
    check_cap(n, OPERATOR_CAP)?;
    let mask = range_mask(lo, hi) as usize;
    let value = C64::new(0.5f64.powi((hi - lo) as i32), 0.0);
    let dim = 1usize << n;
    Ok(DMatrix::from_fn(dim, dim, |r, c| if (r ^ c) & !mask == 0 { value } else { ZERO }))
}

/// `⟨ψ| P ⊗ 1 |ψ⟩` with `P` the `|+⟩` projector on `[lo, hi)`.
pub fn plus_probability(state: &DVector<C64>, lo: usize, hi: usize) -> f64 {
    let a_mask = range_mask(lo, hi) as usize;
    let norm = 0.5f64.powi((hi - lo) as i32);
    let mut total = 0.0;
    for env in (0..state.len()).filter(|b| b & a_mask == 0) {
        let mut amp = ZERO;
        for u in 0..1usize << (hi - lo) {
            amp += state[env | (u << lo)];
        }
        total += amp.norm_sqr() * norm;
    }
    total
}

/// Embeds a hypothesis on the window: all pairs with both ends in `[lo, hi)`.
pub fn window_hamiltonian(x_inv: &CouplingVector, win: &Window) -> PauliTermList {
    PauliTermList::ising(x_inv).filter(|t| t.support() & !range_mask(win.lo, win.hi) == 0)
}

/// Pass probability of one interactive likelihood experiment, by explicit
/// evolution of `|+⟩^{⊗n}` under `e^{iH_−t}e^{−iHt}`.
pub fn iqle_outcome_prob_dense(x_true: &CouplingVector, x_inv: &CouplingVector, win: &Window, t: f64) -> Result<f64> {
    let n = x_true.n();
    check_cap(n, STATE_CAP)?;
    if win.a() > MAX_OBSERVABLE_SITES || win.hi > n {
        return Err(Error::InvalidGeometry(format!("window {win:?} on {n} sites")));
    }
    let forward = PauliTermList::ising(x_true).diagonal()?;
    let inverse = window_hamiltonian(x_inv, win).diagonal()?;
    let psi0 = plus_state(n)?;
    let psi = DVector::from_iterator(
        psi0.len(),
        psi0.iter()
            .zip(forward.iter().zip(&inverse))
            .map(|(&amp, (&e, &e_minus))| amp * (-I * (e - e_minus) * t).exp()),
    );
    Ok(plus_probability(&psi, win.a_lo, win.a_hi))
}

/// Largest eigenvalue magnitude of a Hermitian matrix.
pub fn hermitian_norm(m: &DMatrix<C64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigenvalues().iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// `‖[A, B]‖` for Hermitian `A`, `B`.
pub fn commutator_norm(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    let c = a * b - b * a;
    hermitian_norm(&(c * I))
}

/// Spectral norm of an arbitrary square matrix.
pub fn spectral_norm(m: &DMatrix<C64>) -> f64 {
    m.clone().singular_values().iter().fold(0.0, |acc, v| acc.max(*v))
}

/// Outcome of iterating the exact and idealized `r`-swap recursions.
#[derive(Clone, Debug)]
pub struct RSwapResult {
    pub a_r: DMatrix<C64>,
    pub a_tilde_r: DMatrix<C64>,
    pub error: f64,
}

/// Precomputed spectra and exact norms for one `(H, H_−, window)` triple.
pub struct RSwapSystem {
    n: usize,
    h: Spectrum,
    h_minus: Spectrum,
    lambda: Spectrum,
    y: DMatrix<C64>,
    pub norms: bounds::NoncommutingNorms,
    /// `‖H_out + H_int∖A‖`.
    pub y_norm: f64,
}

impl RSwapSystem {
    /// `h_minus` must be supported inside the window.
    pub fn new(h: &PauliTermList, h_minus: &PauliTermList, win: &Window) -> Result<Self> {
        check_cap(h.n, OPERATOR_CAP)?;
        if h_minus.n != h.n {
            return Err(Error::DimensionMismatch {
                expected: h.n,
                got: h_minus.n,
            });
        }
        let wmask = range_mask(win.lo, win.hi);
        if h_minus.terms.iter().any(|t| t.support() & !wmask != 0) {
            return Err(Error::InvalidGeometry("inversion Hamiltonian leaves the window".into()));
        }
        let parts = partition_terms(h, win);
        let h_in = parts.inside.matrix()?;
        let lambda_terms = parts.inside.minus(h_minus);
        let lambda = lambda_terms.matrix()?;
        let h_int = parts.int_a.plus(&parts.int_not_a).matrix()?;
        let y = parts.outside.plus(&parts.int_not_a).matrix()?;
        let norms = bounds::NoncommutingNorms {
            comm_in_lambda: commutator_norm(&h_in, &lambda),
            comm_int_in: commutator_norm(&h_int, &h_in),
            h_int_a: hermitian_norm(&parts.int_a.matrix()?),
            h_int_not_a: hermitian_norm(&parts.int_not_a.matrix()?),
            h_out: hermitian_norm(&parts.outside.matrix()?),
        };
        Ok(Self {
            n: h.n,
            h: Spectrum::of(h)?,
            h_minus: Spectrum::of(h_minus)?,
            lambda: if lambda_terms.is_diagonal() {
                Spectrum::of(&lambda_terms)?
            } else {
                Spectrum::of_matrix(lambda)
            },
            y_norm: hermitian_norm(&y),
            y,
            norms,
        })
    }

    fn step_unitaries(&self, s: f64) -> (Unitary, Unitary) {
        // A ↦ W† A W with W = e^{iH_−s} e^{−iHs}; Ã ↦ V† Ã V with V = e^{−iΛs}.
        let w = self.h_minus.propagator(s).adjoint().then_apply(&self.h.propagator(s));
        (w, self.lambda.propagator(s))
    }

    pub fn r_swap(&self, a_op: &DMatrix<C64>, t: f64, r: u32) -> Result<RSwapResult> {
        if r == 0 {
            return Err(Error::InvalidConfig("swap count must be at least 1".into()));
        }
        let (w, v) = self.step_unitaries(t / r as f64);
        let mut a_r = a_op.clone();
        let mut a_tilde = a_op.clone();
        for _ in 0..r {
            a_r = w.conjugate(&a_r);
            a_tilde = v.conjugate(&a_tilde);
        }
        let error = hermitian_norm(&(&a_r - &a_tilde));
        Ok(RSwapResult {
            a_r,
            a_tilde_r: a_tilde,
            error,
        })
    }

    /// Checks the one-step error recursion at every step of an `r`-swap run
    /// with exact norms. `a_norm` is `‖A‖`.
    pub fn check_recursion(&self, a_op: &DMatrix<C64>, a_norm: f64, t: f64, r: u32) -> Result<RecursionReport> {
        if r == 0 {
            return Err(Error::InvalidConfig("swap count must be at least 1".into()));
        }
        let s = t / r as f64;
        let (w, v) = self.step_unitaries(s);
        let trotter = (self.norms.comm_in_lambda + self.norms.comm_int_in) * a_norm * s * s;
        let direct = 2.0 * self.norms.h_int_a * a_norm * s;
        let growth = (2.0 * self.y_norm * s).exp() * s;
        let mut a_k = a_op.clone();
        let mut a_tilde = a_op.clone();
        let mut prev = 0.0;
        let mut chain = 0.0;
        let mut steps = Vec::with_capacity(r as usize);
        for _ in 0..r {
            a_k = w.conjugate(&a_k);
            a_tilde = v.conjugate(&a_tilde);
            let measured = hermitian_norm(&(&a_k - &a_tilde));
            let increment = trotter + direct + commutator_norm(&self.y, &a_tilde) * growth;
            chain += increment;
            steps.push(RecursionStep {
                measured,
                bound: prev + increment,
                chain_bound: chain,
            });
            prev = measured;
        }
        Ok(RecursionReport { n: self.n, t, r, steps })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecursionStep {
    /// `‖δ^{(k)}‖`.
    pub measured: f64,
    /// `‖δ^{(k−1)}‖` plus the one-step increment.
    pub bound: f64,
    /// Sum of all increments so far.
    pub chain_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecursionReport {
    pub n: usize,
    pub t: f64,
    pub r: u32,
    pub steps: Vec<RecursionStep>,
}

impl RecursionReport {
    /// Steps whose measured error exceeds the one-step or the accumulated
    /// bound by more than [`RECURSION_SLACK`].
    pub fn violations(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.measured > s.bound + RECURSION_SLACK || s.measured > s.chain_bound + RECURSION_SLACK)
            .count()
    }

    /// Smallest `bound − measured` over all steps.
    pub fn margin(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| (s.bound - s.measured).min(s.chain_bound - s.measured))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn final_error(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.measured)
    }
}

pub fn r_swap_observable(
    h: &PauliTermList,
    h_minus: &PauliTermList,
    win: &Window,
    t: f64,
    r: u32,
    a_op: &DMatrix<C64>,
) -> Result<RSwapResult> {
    RSwapSystem::new(h, h_minus, win)?.r_swap(a_op, t, r)
}

/// Measured `‖Ã(t) − A(t)‖` for a diagonal model together with the
/// commuting truncation bound evaluated with the exact `‖H_int∩A‖`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommutingCheck {
    pub t: f64,
    pub measured: f64,
    pub bound: f64,
    pub h_int_a: f64,
}

pub fn commuting_truncation_check(
    x_true: &CouplingVector,
    x_inv: &CouplingVector,
    win: &Window,
    times: &[f64],
) -> Result<Vec<CommutingCheck>> {
    let n = x_true.n();
    let h = PauliTermList::ising(x_true);
    let h_minus = window_hamiltonian(x_inv, win);
    let sys = RSwapSystem::new(&h, &h_minus, win)?;
    let a_op = plus_projector(n, win.a_lo, win.a_hi)?;
    times
        .iter()
        .map(|&t| {
            Ok(CommutingCheck {
                t,
                measured: sys.r_swap(&a_op, t, 1)?.error,
                bound: bounds::commuting_truncation_bound(1.0, sys.norms.h_int_a, t),
                h_int_a: sys.norms.h_int_a,
            })
        })
        .collect()
}

/// Transverse-field Ising test instance: couplings from `x`, fields
/// `h_i ~ unif(0, max_field)`, and an inversion Hamiltonian on the window
/// whose parameters are the true ones plus uniform noise of half-width
/// `noise`.
pub fn transverse_ising_instance<R: Rng + ?Sized>(
    rng: &mut R,
    x: &CouplingVector,
    win: &Window,
    max_field: f64,
    noise: f64,
) -> Result<(PauliTermList, PauliTermList)> {
    let fields: Vec<f64> = (0..x.n()).map(|_| rng.gen::<f64>() * max_field).collect();
    let h = PauliTermList::transverse_ising(x, &fields)?;
    let wmask = range_mask(win.lo, win.hi);
    let mut h_minus = PauliTermList::new(x.n());
    for t in h.terms.iter().filter(|t| t.support() & !wmask == 0) {
        h_minus.push(PauliTerm {
            coeff: t.coeff + noise * (2.0 * rng.gen::<f64>() - 1.0),
            ..*t
        });
    }
    Ok((h, h_minus))
}

/// Fitted Lieb–Robinson constants from commutator samples
/// `‖[H_out + H_int∖A, Ã(t)]‖ ≈ C e^{2st − μ·dist}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiebRobinsonFit {
    pub s: f64,
    pub mu: f64,
}

/// Least-squares fit of `ln(norm)` against `t` at fixed `dist`. Returns
/// `None` with fewer than two usable samples.
pub fn fit_lieb_robinson(samples: &[(f64, f64)], prefactor: f64, dist: f64) -> Option<LiebRobinsonFit> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(_, v)| *v > 0.0 && v.is_finite())
        .map(|&(t, v)| (t, v.ln()))
        .collect();
    if pts.len() < 2 || dist <= 0.0 || prefactor <= 0.0 {
        return None;
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if stt == 0.0 {
        return None;
    }
    let slope = pts.iter().map(|p| (p.0 - mt) * (p.1 - mv)).sum::<f64>() / stt;
    let intercept = mv - slope * mt;
    Some(LiebRobinsonFit {
        s: (slope / 2.0).max(0.0),
        mu: ((prefactor.ln() - intercept) / dist).max(0.0),
    })
}

/// Commutator samples for [`fit_lieb_robinson`] over a time grid.
pub fn lieb_robinson_samples(sys: &RSwapSystem, a_op: &DMatrix<C64>, times: &[f64]) -> Vec<(f64, f64)> {
    times
        .iter()
        .map(|&t| {
            let a_tilde = sys.lambda.propagator(t).conjugate(a_op);
            (t, commutator_norm(&sys.y, &a_tilde))
        })
        .collect()
}

/// Fisher information matrix of one experiment over all couplings.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherMatrix {
    pub values: DMatrix<f64>,
    /// Pass probability at the evaluation point.
    pub probability: f64,
    /// Set when either outcome probability is below `1e−9`, in which case
    /// every entry is undefined and `values` is zero.
    pub undefined: bool,
}

pub const FISHER_MIN_PROBABILITY: f64 = 1e-9;

/// Fisher information from five-point central differences of the analytic
/// likelihood in each coupling.
pub fn fisher_numeric(x: &CouplingVector, x_inv: &CouplingVector, win: &Window, t: f64, h_step: f64) -> Result<FisherMatrix> {
    use crate::ising_model::likelihood_full;
    if !(h_step > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step must be positive, got {h_step}")));
    }
    let p = likelihood_full(x, x_inv, win, t)?;
    let dim = x.len();
    if p < FISHER_MIN_PROBABILITY || 1.0 - p < FISHER_MIN_PROBABILITY {
        return Ok(FisherMatrix {
            values: DMatrix::zeros(dim, dim),
            probability: p,
            undefined: true,
        });
    }
    let mut grad = vec![0.0; dim];
    let mut shifted = x.clone();
    for (k, g) in grad.iter_mut().enumerate() {
        let base = x.values()[k];
        let mut eval = |offset: f64| {
            shifted.values_mut()[k] = base + offset;
            likelihood_full(&shifted, x_inv, win, t)
        };
        let (p2, p1, m1, m2) = (eval(2.0 * h_step)?, eval(h_step)?, eval(-h_step)?, eval(-2.0 * h_step)?);
        shifted.values_mut()[k] = base;
        *g = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h_step);
    }
    let weight = 1.0 / p + 1.0 / (1.0 - p);
    let values = DMatrix::from_fn(dim, dim, |i, j| grad[i] * grad[j] * weight);
    Ok(FisherMatrix {
        values,
        probability: p,
        undefined: false,
    })
}

/// `e^{−iθP}` for a single Pauli word, using `P² = 1`.
pub fn pauli_exp(n: usize, term: &PauliTerm, theta: f64) -> Result<DMatrix<C64>> {
    check_cap(n, OPERATOR_CAP)?;
    let unit = PauliTermList::with_terms(n, vec![PauliTerm { coeff: 1.0, ..*term }])?.matrix()?;
    let dim = 1usize << n;
    Ok(DMatrix::identity(dim, dim) * C64::new(theta.cos(), 0.0) - unit * (I * theta.sin()))
}

/// Unitary of a sequence of `(Hamiltonian, duration)` segments, the first
/// segment acting first.
pub fn sequence_unitary(n: usize, segments: &[(PauliTermList, f64)]) -> Result<DMatrix<C64>> {
    check_cap(n, OPERATOR_CAP)?;
    let mut u = Unitary::identity(n);
    for (h, tau) in segments {
        if h.n != n {
            return Err(Error::DimensionMismatch { expected: n, got: h.n });
        }
        u = Spectrum::of(h)?.propagator(*tau).then_apply(&u);
    }
    Ok(u.matrix())
}

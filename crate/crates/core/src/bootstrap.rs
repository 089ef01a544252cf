//! Calibration of an uncalibrated Ising device through its affine control
//! map `x(C) = G·C + x0`.
//!
//! The map is learned column by column with compressed Hamiltonian learning,
//! inverted with a truncated-SVD pseudoinverse and used to pick controls
//! that realize target couplings.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densesim::{self, PauliTerm, PauliTermList, C64};
use crate::error::{Error, Result};
use crate::ising_model::{num_pairs, pair_index, CouplingVector, PriorSpec};
use crate::rng;
use crate::scanner::{run_scan, DataSource, GlobalCloud, IsingSystem, ScanConfig, ScanSchedule};

/// Relative singular-value cutoff of [`pseudoinverse`].
pub const DEFAULT_PINV_TOLERANCE: f64 = 1e-10;

/// Affine control map with `G` stored as a `P × M` matrix whose column `k`
/// holds the couplings switched on by control `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ControlMapFile", into = "ControlMapFile")]
pub struct ControlMap {
    n: usize,
    g: DMatrix<f64>,
    x0: CouplingVector,
}

/// On-disk form: dimensions, row-major `G` and the offset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControlMapFile {
    pub n: usize,
    pub parameters: usize,
    pub controls: usize,
    pub g: Vec<f64>,
    pub offset: Vec<f64>,
}

impl TryFrom<ControlMapFile> for ControlMap {
    type Error = Error;

    fn try_from(f: ControlMapFile) -> Result<Self> {
        if f.g.len() != f.parameters * f.controls {
            return Err(Error::DimensionMismatch {
                expected: f.parameters * f.controls,
                got: f.g.len(),
            });
        }
        let g = DMatrix::from_row_slice(f.parameters, f.controls, &f.g);
        ControlMap::new(f.n, g, CouplingVector::from_values(f.n, f.offset)?)
    }
}

impl From<ControlMap> for ControlMapFile {
    fn from(m: ControlMap) -> Self {
        let (p, c) = m.g.shape();
        let g = (0..p).flat_map(|r| (0..c).map(move |k| (r, k))).map(|(r, k)| m.g[(r, k)]).collect();
        Self {
            n: m.n,
            parameters: p,
            controls: c,
            g,
            offset: m.x0.into_values(),
        }
    }
}

impl ControlMap {
    pub fn new(n: usize, g: DMatrix<f64>, x0: CouplingVector) -> Result<Self> {
        if g.nrows() != num_pairs(n) || x0.n() != n {
            return Err(Error::DimensionMismatch {
                expected: num_pairs(n),
                got: g.nrows(),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control map"));
        }
        Ok(Self { n, g, x0 })
    }

    pub fn from_columns(x0: CouplingVector, columns: &[CouplingVector]) -> Result<Self> {
        let n = x0.n();
        let p = num_pairs(n);
        let mut g = DMatrix::zeros(p, columns.len());
        for (k, col) in columns.iter().enumerate() {
            if col.n() != n {
                return Err(Error::DimensionMismatch { expected: n, got: col.n() });
            }
            g.column_mut(k).copy_from_slice(col.values());
        }
        Self::new(n, g, x0)
    }

    /// Nearest-neighbor crosstalk device: control `k` drives pair `(k, k+1)`
    /// with strength `drive` plus decaying crosstalk on every pair. The
    /// offset is zero.
    pub fn crosstalk<R: Rng + ?Sized>(rng: &mut R, n: usize, b: f64, drive: f64) -> Result<Self> {
        let columns: Vec<CouplingVector> = (0..n.saturating_sub(1))
            .map(|k| {
                let prior = PriorSpec::CrosstalkControl { b, control: k, drive };
                prior.validate(n).map(|_| prior.sample(rng, n))
            })
            .collect::<Result<_>>()?;
        Self::from_columns(CouplingVector::zeros(n), &columns)
    }

    /// Entrywise prior mean of [`ControlMap::crosstalk`].
    pub fn crosstalk_prior_mean(n: usize, b: f64, drive: f64) -> Result<Self> {
        let columns: Vec<CouplingVector> = (0..n.saturating_sub(1))
            .map(|k| PriorSpec::CrosstalkControl { b, control: k, drive }.mean(n))
            .collect();
        Self::from_columns(CouplingVector::zeros(n), &columns)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn controls(&self) -> usize {
        self.g.ncols()
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn offset(&self) -> &CouplingVector {
        &self.x0
    }

    pub fn column(&self, k: usize) -> CouplingVector {
        CouplingVector::from_values(self.n, self.g.column(k).iter().copied().collect()).expect("valid column")
    }

    /// Couplings realized by controls `c`.
    pub fn apply(&self, c: &[f64]) -> Result<CouplingVector> {
        if c.len() != self.controls() {
            return Err(Error::DimensionMismatch {
                expected: self.controls(),
                got: c.len(),
            });
        }
        let v = &self.g * DVector::from_column_slice(c);
        CouplingVector::from_values(self.n, v.iter().zip(self.x0.values()).map(|(a, b)| a + b).collect())
    }
}

/// An uncalibrated device that can be set to any control vector and then
/// queried like an Ising system.
pub trait ControlledDevice: Sync {
    fn n(&self) -> usize;
    fn controls(&self) -> usize;
    /// A data source for the device held at controls `c`. `run` selects an
    /// independent stream of measurement randomness.
    fn configure(&self, c: &[f64], run: u64) -> Result<Box<dyn DataSource>>;
}

/// A device simulated from a hidden control map.
pub struct SimulatedDevice {
    map: ControlMap,
    seed: u64,
}

impl SimulatedDevice {
    pub fn new(map: ControlMap, seed: u64) -> Self {
        Self { map, seed }
    }

    pub fn map(&self) -> &ControlMap {
        &self.map
    }
}

impl ControlledDevice for SimulatedDevice {
    fn n(&self) -> usize {
        self.map.n
    }

    fn controls(&self) -> usize {
        self.map.controls()
    }

    fn configure(&self, c: &[f64], run: u64) -> Result<Box<dyn DataSource>> {
        let x = self.map.apply(c)?;
        Ok(Box::new(IsingSystem::new(x, rng::stream(self.seed, "device", run))))
    }
}

/// Estimates the couplings of a device held at fixed controls.
pub trait HamiltonianLearner: Sync {
    fn learn(&self, device: &dyn ControlledDevice, c: &[f64], run: u64, prior: &PriorSpec) -> Result<CouplingVector>;
}

/// Learner that returns the exact couplings of a known map.
pub struct OracleLearner {
    pub truth: ControlMap,
}

impl HamiltonianLearner for OracleLearner {
    fn learn(&self, _: &dyn ControlledDevice, c: &[f64], _: u64, _: &PriorSpec) -> Result<CouplingVector> {
        self.truth.apply(c)
    }
}

/// Compressed learning with a scanning window; the estimate is the global
/// posterior mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CqhlLearner {
    pub a: usize,
    pub w: usize,
    pub particles: usize,
    pub experiments_per_scan: usize,
    pub positions: Option<Vec<usize>>,
    pub scan: ScanConfig,
    pub seed: u64,
}

impl HamiltonianLearner for CqhlLearner {
    fn learn(&self, device: &dyn ControlledDevice, c: &[f64], run: u64, prior: &PriorSpec) -> Result<CouplingVector> {
        let n = device.n();
        let schedule = match &self.positions {
            Some(p) => ScanSchedule::with_positions(n, self.a, self.w, self.experiments_per_scan, p.clone())?,
            None => ScanSchedule::standard(n, self.a, self.w, self.experiments_per_scan)?,
        };
        let mut global = GlobalCloud::from_prior(&mut rng::stream(self.seed, "bootstrap-prior", run), prior, n, self.particles)?;
        let mut system = device.configure(c, run)?;
        let trace = run_scan(
            &mut rng::stream(self.seed, "bootstrap-scan", run),
            system.as_mut(),
            &mut global,
            &schedule,
            &self.scan,
            None,
        )?;
        if !trace.aborted_slots.is_empty() {
            return Err(Error::AllWeightsZero);
        }
        Ok(global.mean())
    }
}

/// Priors for the offset run and for each control run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningPriors {
    pub b: f64,
    pub drive: f64,
}

impl Default for LearningPriors {
    fn default() -> Self {
        Self { b: 1.0, drive: 10.0 }
    }
}

impl LearningPriors {
    pub fn offset(&self) -> PriorSpec {
        PriorSpec::ExponentialDecayUniform { b: self.b }
    }

    pub fn column(&self, k: usize) -> PriorSpec {
        PriorSpec::CrosstalkControl {
            b: self.b,
            control: k,
            drive: self.drive,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlMapEstimate {
    pub map: ControlMap,
    /// Columns whose learning run failed; they are left at zero.
    pub failed: Vec<bool>,
}

/// Learns `x0` with all controls off, then `x0 + v_k` with control `k` at 1,
/// and subtracts. Runs are independent and execute in parallel.
pub fn learn_control_map(
    device: &dyn ControlledDevice,
    learner: &dyn HamiltonianLearner,
    priors: &LearningPriors,
) -> Result<ControlMapEstimate> {
    let m = device.controls();
    let n = device.n();
    let x0 = learner
        .learn(device, &vec![0.0; m], 0, &priors.offset())
        .map_err(|e| Error::LearningFailed {
            run: 0,
            source: Box::new(e),
        })?;
    let runs: Vec<Result<CouplingVector>> = (0..m)
        .into_par_iter()
        .map(|k| {
            let mut c = vec![0.0; m];
            c[k] = 1.0;
            learner.learn(device, &c, k as u64 + 1, &priors.column(k))
        })
        .collect();
    let mut failed = vec![false; m];
    let mut columns = Vec::with_capacity(m);
    for (k, run) in runs.into_iter().enumerate() {
        match run {
            Ok(x) => columns.push(x.sub(&x0)?),
            Err(e) => {
                log::warn!("learning control {k} failed: {e}");
                failed[k] = true;
                columns.push(CouplingVector::zeros(n));
            }
        }
    }
    Ok(ControlMapEstimate {
        map: ControlMap::from_columns(x0, &columns)?,
        failed,
    })
}

/// Moore–Penrose pseudoinverse with its numerical rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Pseudoinverse {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

impl Pseudoinverse {
    /// `‖GG⁺ − 1‖₂`: 0 at full row rank, 1 otherwise.
    pub fn projector_defect(&self, rows: usize) -> f64 {
        if self.rank < rows {
            1.0
        } else {
            0.0
        }
    }

    /// `‖G⁺‖₂`.
    pub fn norm(&self) -> f64 {
        self.singular_values
            .iter()
            .take(self.rank)
            .fold(0.0, |acc, s| acc.max(1.0 / s))
    }

    /// `‖G‖₂‖G⁺‖₂`.
    pub fn condition_number(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0) * self.norm()
    }
}

/// Pseudoinverse via SVD, dropping singular values below `tol·σ_max`.
pub fn pseudoinverse_full(g: &DMatrix<f64>, tol: f64) -> Pseudoinverse {
    let (rows, cols) = g.shape();
    if rows == 0 || cols == 0 {
        return Pseudoinverse {
            matrix: DMatrix::zeros(cols, rows),
            rank: 0,
            singular_values: Vec::new(),
        };
    }
    // nalgebra's SVD can return inaccurate singular vectors for exactly
    // rank-deficient inputs, which crosstalk maps routinely are.
    let svd = faer::Mat::<f64>::from_fn(rows, cols, |i, j| g[(i, j)])
        .thin_svd()
        .expect("SVD of a finite matrix converges");
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let mut sigma: Vec<(usize, f64)> = (0..s.nrows()).map(|k| (k, s[k])).collect();
    let sigma_max = sigma.iter().fold(0.0f64, |acc, s| acc.max(s.1));
    let cutoff = tol * sigma_max;
    let mut inv = DMatrix::zeros(cols, rows);
    let mut rank = 0;
    for &(k, s) in &sigma {
        if s > cutoff && s > 0.0 {
            rank += 1;
            for i in 0..cols {
                for j in 0..rows {
                    inv[(i, j)] += v[(i, k)] * u[(j, k)] / s;
                }
            }
        }
    }
    sigma.sort_by(|a, b| b.1.total_cmp(&a.1));
    Pseudoinverse {
        matrix: inv,
        rank,
        singular_values: sigma.into_iter().map(|s| s.1).collect(),
    }
}

pub fn pseudoinverse(g: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    pseudoinverse_full(g, tol).matrix
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().fold(0.0, |acc, s| acc.max(*s))
}

/// Least-squares controls `Ĝ⁺(target − x̂0)` for each target.
pub fn calibrate(map: &ControlMap, pinv: &DMatrix<f64>, targets: &[CouplingVector]) -> Result<Vec<Vec<f64>>> {
    targets
        .iter()
        .map(|t| {
            if t.n() != map.n {
                return Err(Error::DimensionMismatch { expected: map.n, got: t.n() });
            }
            let rhs = DVector::from_iterator(t.len(), t.values().iter().zip(map.x0.values()).map(|(a, b)| a - b));
            Ok((pinv * rhs).iter().copied().collect())
        })
        .collect()
}

/// `‖G·C_k + x0 − target_k‖₂` under the true map.
pub fn calibration_errors(truth: &ControlMap, controls: &[Vec<f64>], targets: &[CouplingVector]) -> Result<Vec<f64>> {
    if controls.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            got: controls.len(),
        });
    }
    controls
        .iter()
        .zip(targets)
        .map(|(c, t)| Ok(truth.apply(c)?.sub(t)?.l2_norm()))
        .collect()
}

/// Value 10 (or `strength`) on pair `(k, k+1)` for each `k`.
pub fn nearest_neighbor_targets(n: usize, strength: f64) -> Vec<CouplingVector> {
    (0..n.saturating_sub(1))
        .map(|k| {
            let mut t = CouplingVector::zeros(n);
            t.set(k, k + 1, strength);
            t
        })
        .collect()
}

/// Control vectors `e_k`: switch on only the control meant for target `k`.
pub fn naive_controls(m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|k| {
            let mut c = vec![0.0; m];
            c[k] = 1.0;
            c
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                median: f64::NAN,
            };
        }
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
        Self {
            mean,
            std: var.sqrt(),
            median: median(values),
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m == 0 {
        f64::NAN
    } else if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Both forms of the single-step calibration error bound for one target,
/// with the offset estimate's error added.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepBoundCheck {
    pub after: f64,
    /// `(‖ĜĜ⁺−1‖ + ‖E‖‖Ĝ⁺‖)‖T − x̂0‖ + ‖x0 − x̂0‖`.
    pub operator_bound: f64,
    /// `‖(ĜĜ⁺−1)(T − x̂0)‖ + ‖E‖‖Ĝ⁺‖‖T − x̂0‖ + ‖x0 − x̂0‖`.
    pub vector_bound: f64,
}

impl StepBoundCheck {
    pub fn holds(&self) -> bool {
        let slack = 1e-9 * (1.0 + self.operator_bound);
        self.after <= self.operator_bound + slack && self.after <= self.vector_bound + slack
    }
}

pub fn step_bound_checks(
    truth: &ControlMap,
    estimate: &ControlMap,
    pinv: &Pseudoinverse,
    targets: &[CouplingVector],
) -> Result<Vec<StepBoundCheck>> {
    let e_norm = spectral_norm(&(&truth.g - &estimate.g));
    let gplus = pinv.norm();
    let defect = pinv.projector_defect(estimate.g.nrows());
    let offset_err = truth.x0.sub(&estimate.x0)?.l2_norm();
    let controls = calibrate(estimate, &pinv.matrix, targets)?;
    let after = calibration_errors(truth, &controls, targets)?;
    targets
        .iter()
        .zip(controls.iter().zip(after))
        .map(|(t, (c, after))| {
            let shifted = t.sub(&estimate.x0)?;
            let realized = &estimate.g * DVector::from_column_slice(c);
            let residual: f64 = realized
                .iter()
                .zip(shifted.values())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm = shifted.l2_norm();
            Ok(StepBoundCheck {
                after,
                operator_bound: (defect + e_norm * gplus) * norm + offset_err,
                vector_bound: residual + e_norm * gplus * norm + offset_err,
            })
        })
        .collect()
}

/// First-order product formula `(e^{−iH(C1)aΔt/R} e^{−iH(C2)bΔt/R})^R` as
/// `(controls, duration)` segments in time order.
pub fn trotter_schedule(c1: &[f64], c2: &[f64], a: f64, b: f64, dt: f64, reps: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    if reps == 0 {
        return Err(Error::InvalidConfig("Trotter repetitions must be at least 1".into()));
    }
    let r = reps as f64;
    Ok((0..reps)
        .flat_map(|_| [(c1.to_vec(), a * dt / r), (c2.to_vec(), b * dt / r)])
        .collect())
}

/// One constant-Hamiltonian pulse `e^{−i·term·duration}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub term: PauliTerm,
    pub duration: f64,
}

/// Four nearest-neighbor pulses on three qubits whose product approximates
/// `e^{−2i Z⊗1⊗Z Δt²}` when the middle qubit starts in `|0⟩`. Listed in time
/// order.
pub fn nnn_gadget(dt: f64) -> Result<Vec<Pulse>> {
    if !(dt >= 0.0) {
        return Err(Error::InvalidConfig(format!("gadget step must be non-negative, got {dt}")));
    }
    let zx = |c| PauliTerm::from_word(c, "ZX1").expect("valid word");
    let yz = |c| PauliTerm::from_word(c, "1YZ").expect("valid word");
    Ok(vec![
        Pulse { term: yz(-1.0), duration: dt },
        Pulse { term: zx(-1.0), duration: dt },
        Pulse { term: yz(1.0), duration: dt },
        Pulse { term: zx(1.0), duration: dt },
    ])
}

/// Unitary of a pulse sequence on `n` qubits.
pub fn pulse_unitary(n: usize, pulses: &[Pulse]) -> Result<DMatrix<C64>> {
    let dim = 1usize << n;
    let mut u = DMatrix::identity(dim, dim);
    for p in pulses {
        u = densesim::pauli_exp(n, &p.term, p.term.coeff * p.duration)? * u;
    }
    Ok(u)
}

/// `‖(U_gadget − e^{−2iZ1ZΔt²})Π‖₂` with `Π` projecting the middle qubit
/// onto `|0⟩`.
pub fn nnn_gadget_error(dt: f64) -> Result<f64> {
    let gadget = pulse_unitary(3, &nnn_gadget(dt)?)?;
    let target = densesim::pauli_exp(3, &PauliTerm::from_word(1.0, "Z1Z")?, 2.0 * dt * dt)?;
    let diff = gadget - target;
    let restricted = DMatrix::from_fn(8, 8, |r, c| if c & 0b010 == 0 { diff[(r, c)] } else { C64::new(0.0, 0.0) });
    Ok(densesim::spectral_norm(&restricted))
}

/// Maps a control vector to a dense Hamiltonian for Trotter checks.
pub fn hamiltonian_of(controls: &[PauliTermList], c: &[f64]) -> Result<PauliTermList> {
    let n = controls.first().map_or(0, |h| h.n);
    if controls.len() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: controls.len(),
            got: c.len(),
        });
    }
    let mut out = PauliTermList::new(n);
    for (h, &ck) in controls.iter().zip(c) {
        out.terms.extend(h.terms.iter().map(|t| PauliTerm { coeff: t.coeff * ck, ..*t }));
    }
    Ok(out)
}

/// Index of pair `(k, k+1)` for a nearest-neighbor control.
pub fn nearest_neighbor_index(n: usize, k: usize) -> usize {
    pair_index(n, k, k + 1)
}

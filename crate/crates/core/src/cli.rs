//! Batch runs: configuration, the learning and calibration pipelines, the
//! verification suites, and the `cqhl` command line.
//!
//! Every pipeline is available as a function returning its results, and as a
//! subcommand that also writes them under the configured output directory.
//! Output JSON files embed the resolved configuration and its SHA-256.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bootstrap::{
    self, calibrate, calibration_errors, learn_control_map, naive_controls, nearest_neighbor_targets,
    pseudoinverse_full, step_bound_checks, ControlMap, CqhlLearner, HamiltonianLearner, LearningPriors,
    OracleLearner, SimulatedDevice, Summary,
};
use crate::bounds::{self, BoundReport};
use crate::densesim::{self, RSwapSystem};
use crate::error::{Error, Result};
use crate::experiment_design::place_window;
use crate::inference::{LikelihoodMode, ResampleConfig};
use crate::ising_model::{
    likelihood_full, likelihood_windowed, op_norm_diag, pairs, CouplingVector, DecayEnvelope, OpNorm, PriorSpec,
    Window,
};
use crate::rng::stream;
use crate::scanner::{fit_decay_rate, run_scan, GlobalCloud, IsingSystem, ScanConfig, ScanSchedule, ScanTrace};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    /// Minutes on one core.
    #[default]
    Desk,
    /// Full-size chains; hours.
    Full,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    #[default]
    Cqhl,
    /// Exact couplings; isolates the calibration step.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub learner: LearnerKind,
    /// Strength of the intended nearest-neighbor couplings.
    pub drive: f64,
    /// Value of each nearest-neighbor calibration target.
    pub target_strength: f64,
    pub pinv_tolerance: f64,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        Self {
            learner: LearnerKind::Cqhl,
            drive: 10.0,
            target_strength: 10.0,
            pinv_tolerance: bootstrap::DEFAULT_PINV_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingSection {
    pub n_values: Vec<usize>,
    pub repetitions: usize,
}

impl Default for ScalingSection {
    fn default() -> Self {
        Self {
            n_values: vec![8, 12, 16],
            repetitions: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Random instances in the oracle comparison.
    pub oracle_instances: usize,
    pub oracle_max_n: usize,
    pub fisher_instances: usize,
    pub fisher_times: Vec<f64>,
    /// `t` for the small-time scaling ratio `I(2t)/I(t)`.
    pub fisher_small_t: f64,
    pub commuting_instances: usize,
    pub commuting_times: Vec<f64>,
    pub lr_instances: usize,
    pub lr_n: usize,
    pub lr_times: Vec<f64>,
    pub lr_swaps: Vec<u32>,
    /// Maximum transverse field of the non-commuting family.
    pub lr_max_field: f64,
    /// Half-width of the uniform noise separating `H_−` from `H_in`.
    pub lr_inversion_noise: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            oracle_instances: 100,
            oracle_max_n: 10,
            fisher_instances: 40,
            fisher_times: vec![0.1, 0.5, 1.0, 2.0, 4.0],
            fisher_small_t: 0.01,
            commuting_instances: 50,
            commuting_times: vec![0.1, 0.5, 1.0, 2.0, 5.0, 10.0],
            lr_instances: 8,
            lr_n: 8,
            lr_times: vec![0.1, 0.25, 0.5, 1.0],
            lr_swaps: vec![1, 2, 4, 8],
            lr_max_field: 0.5,
            lr_inversion_noise: 0.05,
        }
    }
}

/// Inputs of the bound report that are not derived from the geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    pub a_norm: f64,
    pub poly_alpha: f64,
    pub lr_mu: f64,
    pub lr_s: f64,
    pub lr_h_int_not_a: f64,
    pub fisher_t: f64,
    pub generations: u32,
    pub gamma_max: f64,
    pub kappa_max: f64,
    pub e_max: f64,
    pub gplus_max: f64,
    pub h_max: f64,
    pub delta_bootstrap: f64,
    pub decay_rate: f64,
    pub delta_swap: f64,
    pub swap_cap: u64,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            a_norm: 1.0,
            poly_alpha: 3.0,
            lr_mu: 1.0,
            lr_s: 1.0,
            lr_h_int_not_a: 0.01,
            fisher_t: 1.0,
            generations: 2,
            gamma_max: 0.01,
            kappa_max: 1.5,
            e_max: 0.03,
            gplus_max: 0.1,
            h_max: 10.0,
            delta_bootstrap: 0.01,
            decay_rate: 0.006,
            delta_swap: 1e-4,
            swap_cap: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tier: Tier,
    pub n: usize,
    pub a: usize,
    pub w: usize,
    pub particles: usize,
    pub experiments_per_scan: usize,
    pub seed: u64,
    pub likelihood_mode: LikelihoodMode,
    pub resample: ResampleConfig,
    pub prior: PriorSpec,
    pub delta_trunc: f64,
    /// Cap evolution times by the truncation bound.
    pub cap_times: bool,
    /// Replaces the standard sweep when set.
    pub positions: Option<Vec<usize>>,
    pub output_dir: PathBuf,
    /// Worker threads; 1 gives bit-reproducible runs on any machine.
    pub threads: Option<usize>,
    pub bootstrap: BootstrapSection,
    pub scaling: ScalingSection,
    pub verify: VerifySection,
    pub bounds: BoundsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            tier: Tier::Desk,
            n: 12,
            a: 4,
            w: 8,
            particles: 5000,
            experiments_per_scan: 100,
            seed: 0,
            likelihood_mode: LikelihoodMode::Exact,
            resample: ResampleConfig::default(),
            prior: PriorSpec::default(),
            delta_trunc: 0.01,
            cap_times: true,
            positions: None,
            output_dir: PathBuf::from("out"),
            threads: None,
            bootstrap: BootstrapSection::default(),
            scaling: ScalingSection::default(),
            verify: VerifySection::default(),
            bounds: BoundsSection::default(),
        }
    }

    pub fn full() -> Self {
        Self {
            tier: Tier::Full,
            n: 50,
            particles: 20_000,
            experiments_per_scan: 500,
            scaling: ScalingSection {
                n_values: vec![10, 20, 30, 40, 50],
                repetitions: 20,
            },
            ..Self::desk()
        }
    }

    pub fn for_tier(tier: Tier) -> Self {
        match tier {
            Tier::Desk => Self::desk(),
            Tier::Full => Self::full(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n < 2 {
            return bad(format!("chain needs at least 2 sites, got {}", self.n));
        }
        if self.a == 0 || self.a > self.n || self.w < self.a {
            return bad(format!("need 1 <= a <= n and w >= a, got a={} w={} n={}", self.a, self.w, self.n));
        }
        if self.particles < 2 {
            return bad(format!("need at least 2 particles, got {}", self.particles));
        }
        if !(self.delta_trunc > 0.0) {
            return bad(format!("delta_trunc must be positive, got {}", self.delta_trunc));
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        self.prior.validate(self.n)?;
        self.resample.validate()?;
        self.likelihood_mode.validate()?;
        self.schedule()?;
        let b = &self.bootstrap;
        if !(b.pinv_tolerance >= 0.0 && b.drive.is_finite() && b.target_strength.is_finite()) {
            return bad("bootstrap section has invalid numbers".into());
        }
        if self.scaling.n_values.iter().any(|&n| n < self.a || n < 2) {
            return bad(format!("scaling sizes must be at least a={}", self.a));
        }
        let v = &self.verify;
        if v.oracle_max_n > densesim::STATE_CAP || v.oracle_max_n < 2 {
            return bad(format!("oracle_max_n must lie in 2..={}", densesim::STATE_CAP));
        }
        if v.lr_n > densesim::OPERATOR_CAP || v.lr_n < 4 {
            return bad(format!("lr_n must lie in 4..={}", densesim::OPERATOR_CAP));
        }
        if v.lr_swaps.contains(&0) {
            return bad("swap counts must be at least 1".into());
        }
        let times = v.fisher_times.iter().chain(&v.commuting_times).chain(&v.lr_times);
        if times.chain([&v.fisher_small_t]).any(|t| !(t.is_finite() && *t >= 0.0)) {
            return bad("verification times must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<ScanSchedule> {
        self.schedule_for(self.n)
    }

    fn schedule_for(&self, n: usize) -> Result<ScanSchedule> {
        match &self.positions {
            Some(p) => ScanSchedule::with_positions(n, self.a, self.w, self.experiments_per_scan, p.clone()),
            None => ScanSchedule::standard(n, self.a, self.w, self.experiments_per_scan),
        }
    }

    pub fn scan_config(&self) -> ScanConfig {
        ScanConfig {
            resample: self.resample,
            likelihood_mode: self.likelihood_mode,
            decay: self.cap_times.then(|| self.prior.envelope()),
            delta_trunc: self.delta_trunc,
            max_retries: crate::scanner::DEFAULT_MAX_RETRIES,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Header embedded in every JSON output.
#[derive(Clone, Debug, Serialize)]
pub struct Provenance<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_sha256: String,
    pub config: &'a RunConfig,
}

impl<'a> Provenance<'a> {
    pub fn new(config: &'a RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: config.digest(),
            config,
        }
    }
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    provenance: Provenance<'a>,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(config: &RunConfig, name: &str, body: &T) -> Result<PathBuf> {
    fs::create_dir_all(&config.output_dir)?;
    let path = config.output_dir.join(name);
    let doc = Document {
        provenance: Provenance::new(config),
        body,
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &doc)?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

fn write_csv_rows<T: Serialize>(config: &RunConfig, name: &str, header: &[&str], rows: &[T]) -> Result<(PathBuf, String)> {
    fs::create_dir_all(&config.output_dir)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let path = config.output_dir.join(name);
    fs::write(&path, &bytes)?;
    log::info!("wrote {}", path.display());
    Ok((path, sha256_hex(&bytes)))
}

// ---------------------------------------------------------------- learning

/// Result of one seeded learning run.
#[derive(Clone, Debug)]
pub struct LearnOutcome {
    pub truth: CouplingVector,
    pub estimate: CouplingVector,
    pub prior_mean_error: f64,
    pub final_error: f64,
    pub final_opnorm: OpNorm,
    pub decay_rate: Option<f64>,
    pub trace: ScanTrace,
}

/// Draws hidden couplings and learns them with one scan schedule. `run`
/// selects independent random streams for repeated runs under one seed.
pub fn run_learning(config: &RunConfig, n: usize, run: u64) -> Result<LearnOutcome> {
    let schedule = config.schedule_for(n)?;
    let truth = config.prior.sample(&mut stream(config.seed, "truth", run), n);
    let mut global = GlobalCloud::from_prior(&mut stream(config.seed, "prior", run), &config.prior, n, config.particles)?;
    let mut system = IsingSystem::new(truth.clone(), stream(config.seed, "data", run));
    let trace = run_scan(
        &mut stream(config.seed, "scan", run),
        &mut system,
        &mut global,
        &schedule,
        &config.scan_config(),
        Some(&truth),
    )?;
    let estimate = global.mean();
    Ok(LearnOutcome {
        prior_mean_error: config.prior.mean(n).sub(&truth)?.l2_norm(),
        final_error: estimate.sub(&truth)?.l2_norm(),
        final_opnorm: op_norm_diag(&estimate, &truth)?,
        decay_rate: fit_decay_rate(&trace.rows),
        truth,
        estimate,
        trace,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LearnSummary {
    pub n: usize,
    pub experiments: usize,
    pub prior_mean_l2_error: f64,
    pub final_l2_error: f64,
    pub improvement_ratio: f64,
    pub final_opnorm: OpNorm,
    pub decay_rate: Option<f64>,
    pub resamples: usize,
    pub aborted_slots: Vec<usize>,
    pub trace_csv: String,
    pub trace_sha256: String,
}

pub fn cmd_learn(config: &RunConfig) -> Result<i32> {
    let out = run_learning(config, config.n, 0)?;
    let (csv_path, csv_hash) = write_csv_rows(config, "learn_trace.csv", &crate::scanner::TRACE_HEADER, &out.trace.rows)?;
    let summary = LearnSummary {
        n: config.n,
        experiments: out.trace.rows.len(),
        prior_mean_l2_error: out.prior_mean_error,
        final_l2_error: out.final_error,
        improvement_ratio: out.final_error / out.prior_mean_error,
        final_opnorm: out.final_opnorm,
        decay_rate: out.decay_rate,
        resamples: out.trace.resamples,
        aborted_slots: out.trace.aborted_slots.clone(),
        trace_csv: csv_path.display().to_string(),
        trace_sha256: csv_hash,
    };
    write_json(config, "learn_summary.json", &summary)?;
    println!(
        "final L2 error {:.4e} (prior mean {:.4e}, ratio {:.3e})",
        summary.final_l2_error, summary.prior_mean_l2_error, summary.improvement_ratio
    );
    if !summary.aborted_slots.is_empty() {
        log::error!("learning aborted at schedule slots {:?}", summary.aborted_slots);
        return Ok(1);
    }
    Ok(0)
}

// ------------------------------------------------------------ bootstrapping

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub target: usize,
    pub before: f64,
    pub after: f64,
}

/// Calibration errors are relative: `‖x_realized − target‖₂ / ‖target‖₂`.
/// `before` calibrates with the prior-mean control map; `before_naive`
/// switches on only the intended control.
#[derive(Clone, Debug, Serialize)]
pub struct BootstrapOutcome {
    pub n: usize,
    pub controls: usize,
    pub rows: Vec<CalibrationRow>,
    pub before_naive: Vec<f64>,
    pub before: Summary,
    pub before_naive_summary: Summary,
    pub after: Summary,
    /// Floor set by the rank deficiency: calibration with the true map.
    pub exact_map_floor: Summary,
    pub map_error_norm: f64,
    pub prior_map_error_norm: f64,
    pub failed_columns: Vec<usize>,
    pub pinv_rank: usize,
    pub pinv_norm: f64,
    pub condition_number: f64,
    pub step_bound_holds: bool,
    pub step_bound_max_ratio: f64,
    pub error_bound_one_step: f64,
    #[serde(skip)]
    pub estimate: ControlMap,
}

pub fn run_bootstrap(config: &RunConfig) -> Result<BootstrapOutcome> {
    let n = config.n;
    let sec = &config.bootstrap;
    let envelope_b = config.prior.envelope().b;
    let truth = ControlMap::crosstalk(&mut stream(config.seed, "device-map", 0), n, envelope_b, sec.drive)?;
    let device = SimulatedDevice::new(truth.clone(), config.seed);
    let learner: Box<dyn HamiltonianLearner> = match sec.learner {
        LearnerKind::Cqhl => Box::new(CqhlLearner {
            a: config.a,
            w: config.w,
            particles: config.particles,
            experiments_per_scan: config.experiments_per_scan,
            positions: config.positions.clone(),
            scan: config.scan_config(),
            seed: config.seed,
        }),
        LearnerKind::Oracle => Box::new(OracleLearner { truth: truth.clone() }),
    };
    let priors = LearningPriors {
        b: envelope_b,
        drive: sec.drive,
    };
    let est = learn_control_map(&device, learner.as_ref(), &priors)?;
    let targets = nearest_neighbor_targets(n, sec.target_strength);
    let rel = |errs: Vec<f64>| -> Vec<f64> { errs.iter().zip(&targets).map(|(e, t)| e / t.l2_norm()).collect() };

    let pinv = pseudoinverse_full(est.map.g(), sec.pinv_tolerance);
    let after = rel(calibration_errors(&truth, &calibrate(&est.map, &pinv.matrix, &targets)?, &targets)?);
    let prior_map = ControlMap::crosstalk_prior_mean(n, envelope_b, sec.drive)?;
    let prior_pinv = pseudoinverse_full(prior_map.g(), sec.pinv_tolerance);
    let before = rel(calibration_errors(&truth, &calibrate(&prior_map, &prior_pinv.matrix, &targets)?, &targets)?);
    let before_naive = rel(calibration_errors(&truth, &naive_controls(truth.controls()), &targets)?);
    let true_pinv = pseudoinverse_full(truth.g(), sec.pinv_tolerance);
    let floor = rel(calibration_errors(&truth, &calibrate(&truth, &true_pinv.matrix, &targets)?, &targets)?);

    let checks = step_bound_checks(&truth, &est.map, &pinv, &targets)?;
    let e_norm = bootstrap::spectral_norm(&(truth.g() - est.map.g()));
    let gamma = pinv.projector_defect(est.map.g().nrows()) + e_norm * pinv.norm();
    let h_max = (0..truth.controls())
        .map(|k| truth.column(k).l1_norm())
        .fold(0.0, f64::max);
    Ok(BootstrapOutcome {
        n,
        controls: truth.controls(),
        rows: before
            .iter()
            .zip(&after)
            .enumerate()
            .map(|(k, (&b, &a))| CalibrationRow { target: k, before: b, after: a })
            .collect(),
        before: Summary::of(&before),
        before_naive_summary: Summary::of(&before_naive),
        before_naive,
        after: Summary::of(&after),
        exact_map_floor: Summary::of(&floor),
        map_error_norm: e_norm,
        prior_map_error_norm: bootstrap::spectral_norm(&(truth.g() - prior_map.g())),
        failed_columns: est.failed.iter().enumerate().filter(|(_, f)| **f).map(|(k, _)| k).collect(),
        pinv_rank: pinv.rank,
        pinv_norm: pinv.norm(),
        condition_number: pinv.condition_number(),
        step_bound_holds: checks.iter().all(|c| c.holds()),
        step_bound_max_ratio: checks.iter().map(|c| c.after / c.vector_bound).fold(0.0, f64::max),
        error_bound_one_step: bounds::bootstrap_error_bound(1, gamma, pinv.condition_number(), e_norm, pinv.norm(), h_max),
        estimate: est.map,
    })
}

pub fn cmd_bootstrap(config: &RunConfig) -> Result<i32> {
    let out = run_bootstrap(config)?;
    write_json(config, "bootstrap_map.json", &out.estimate)?;
    let (csv_path, csv_hash) = write_csv_rows(config, "bootstrap_report.csv", &["target", "before", "after"], &out.rows)?;
    #[derive(Serialize)]
    struct Body<'a> {
        #[serde(flatten)]
        outcome: &'a BootstrapOutcome,
        report_csv: String,
        report_sha256: String,
    }
    write_json(
        config,
        "bootstrap_summary.json",
        &Body {
            outcome: &out,
            report_csv: csv_path.display().to_string(),
            report_sha256: csv_hash,
        },
    )?;
    println!(
        "relative error before {:.4e} ± {:.1e}, after {:.4e} ± {:.1e}; single-step bound {}",
        out.before.mean,
        out.before.std,
        out.after.mean,
        out.after.std,
        if out.step_bound_holds { "holds" } else { "VIOLATED" }
    );
    if !out.failed_columns.is_empty() {
        log::error!("learning failed for controls {:?}", out.failed_columns);
        return Ok(1);
    }
    Ok(if out.step_bound_holds { 0 } else { 1 })
}

// ------------------------------------------------------------------ bounds

pub fn bound_reports(config: &RunConfig) -> Vec<BoundReport> {
    let b = &config.bounds;
    let env = config.prior.envelope();
    let (a, w) = (config.a, config.w);
    let h_exp = bounds::window_interaction_norm_exp(a, w, env.b, env.alpha);
    let t_max = bounds::max_time_commuting(config.delta_trunc, b.a_norm, h_exp);
    let norms = bounds::NoncommutingNorms {
        comm_in_lambda: 0.0,
        comm_int_in: 0.0,
        h_int_a: h_exp,
        h_int_not_a: b.lr_h_int_not_a,
        h_out: 0.0,
    };
    let dist = ((w - a) / 2) as f64;
    let lr_t = bounds::lr_time_bound(config.delta_trunc, b.a_norm, h_exp, b.lr_h_int_not_a, a as f64, b.lr_mu, w, a);
    let swap = bounds::swap_error_r_max(config.delta_trunc, b.delta_swap, b.swap_cap);
    vec![
        BoundReport::new(
            "window_interaction_norm_exp",
            "a b e^{-floor((w-a)/2) alpha} / (1 - e^{-alpha})",
            &[("a", a as f64), ("w", w as f64), ("b", env.b), ("alpha", env.alpha)],
            h_exp,
        ),
        BoundReport::new(
            "window_interaction_norm_poly",
            "a b (m^{-alpha} + m^{1-alpha}/(alpha-1)), m = floor((w-a)/2) + 1",
            &[("a", a as f64), ("w", w as f64), ("b", env.b), ("alpha", b.poly_alpha)],
            bounds::window_interaction_norm_poly(a, w, env.b, b.poly_alpha),
        ),
        BoundReport::new(
            "max_time_commuting",
            "ln(delta/|A| + 1) / (2 h_intA)",
            &[("delta", config.delta_trunc), ("a_norm", b.a_norm), ("h_intA", h_exp)],
            t_max,
        ),
        BoundReport::new(
            "commuting_truncation_bound",
            "|A| (e^{2 h_intA t} - 1)",
            &[("a_norm", b.a_norm), ("h_intA", h_exp), ("t", t_max.min(1e6))],
            bounds::commuting_truncation_bound(b.a_norm, h_exp, t_max.min(1e6)),
        ),
        BoundReport::new(
            "noncommuting_truncation_bound",
            "(c_in + c_int)|A|t^2/r + 2h_intA|A|t + 2h_intNotA|A||A_sites|t e^{-mu dist}(e^{2st}-1)e^{2(h_out+h_intNotA)t/r}",
            &[
                ("h_intA", h_exp),
                ("h_intNotA", b.lr_h_int_not_a),
                ("s", b.lr_s),
                ("mu", b.lr_mu),
                ("dist", dist),
                ("t", lr_t),
                ("r", 1e9),
            ],
            bounds::noncommuting_truncation_bound(&norms, b.a_norm, a as f64, b.lr_s, b.lr_mu, dist, lr_t, 1_000_000_000),
        ),
        BoundReport::new(
            "lr_time_bound",
            "delta / (2|A|(h_intA + 2 h_intNotA |A_sites| e^{-mu (w-a)/4}))",
            &[("delta", config.delta_trunc), ("h_intA", h_exp), ("h_intNotA", b.lr_h_int_not_a), ("mu", b.lr_mu)],
            lr_t,
        ),
        BoundReport::new(
            "fisher_bound",
            "4 |d_i H| |d_j H| t^2",
            &[("grad_i", 1.0), ("grad_j", 1.0), ("t", b.fisher_t)],
            bounds::fisher_bound(1.0, 1.0, b.fisher_t),
        ),
        BoundReport::new(
            "bootstrap_error_bound",
            "L Gamma e^{(L-1)(kappa - 1 + |E||G+|)} max_k |H_k|",
            &[
                ("L", b.generations as f64),
                ("gamma_max", b.gamma_max),
                ("kappa_max", b.kappa_max),
                ("e_max", b.e_max),
                ("gplus_max", b.gplus_max),
                ("h_max", b.h_max),
            ],
            bounds::bootstrap_error_bound(b.generations, b.gamma_max, b.kappa_max, b.e_max, b.gplus_max, b.h_max),
        ),
        BoundReport::new(
            "bootstrap_nexp_bound",
            "((L-1) kappa + ln(L |G+| max(h,1) / Delta)) / gamma",
            &[
                ("L", b.generations as f64),
                ("kappa_max", b.kappa_max),
                ("gplus_max", b.gplus_max),
                ("h_max", b.h_max),
                ("delta", b.delta_bootstrap),
                ("gamma", b.decay_rate),
            ],
            bounds::bootstrap_nexp_bound(b.generations, b.kappa_max, b.gplus_max, b.h_max, b.delta_bootstrap, b.decay_rate),
        ),
        BoundReport::new(
            "swap_error_r_max",
            "floor((delta/Delta_swap + 1)/2), at least 1",
            &[("delta", config.delta_trunc), ("delta_swap", b.delta_swap), ("capped", swap.capped as u8 as f64)],
            swap.r as f64,
        ),
    ]
}

pub fn cmd_bounds(config: &RunConfig) -> Result<i32> {
    #[derive(Serialize)]
    struct Body {
        bounds: Vec<BoundReport>,
    }
    let reports = bound_reports(config);
    for r in &reports {
        println!("{:<32} {:.6e}", r.name, r.value);
    }
    write_json(config, "bounds.json", &Body { bounds: reports })?;
    Ok(0)
}

// ----------------------------------------------------------- verification

fn random_window<R: Rng + ?Sized>(rng: &mut R, n: usize, max_a: usize) -> Result<Window> {
    let a = rng.gen_range(1..=max_a.min(n - 1));
    let w = rng.gen_range(a..=n);
    let pos = rng.gen_range(0..=n - a);
    place_window(n, a, w, pos)
}

/// Flat couplings in `[−1, 1)` on every pair, a harder test than the
/// decaying prior.
fn flat_couplings<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CouplingVector {
    let mut x = CouplingVector::zeros(n);
    for (i, j) in pairs(n) {
        x.set(i, j, rng.gen_range(-1.0..1.0));
    }
    x
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub instances: usize,
    pub max_full_deviation: f64,
    pub max_windowed_deviation: f64,
}

impl OracleReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_full_deviation <= tol && self.max_windowed_deviation <= tol
    }
}

/// Closed-form likelihoods against explicit statevector evolution. The
/// windowed likelihood is compared with a system whose couplings leaving
/// the window are removed.
pub fn oracle_check(config: &RunConfig) -> Result<OracleReport> {
    let v = &config.verify;
    let mut rng = stream(config.seed, "oracle-check", 0);
    let mut report = OracleReport {
        instances: v.oracle_instances,
        max_full_deviation: 0.0,
        max_windowed_deviation: 0.0,
    };
    for k in 0..v.oracle_instances {
        let n = rng.gen_range(2..=v.oracle_max_n);
        let win = random_window(&mut rng, n, 3)?;
        let (x, y) = if k % 2 == 0 {
            (config.prior.sample(&mut rng, n), config.prior.sample(&mut rng, n))
        } else {
            (flat_couplings(&mut rng, n), flat_couplings(&mut rng, n))
        };
        let t = 5.0 * (1.0 - rng.gen::<f64>());
        let dense = densesim::iqle_outcome_prob_dense(&x, &y, &win, t)?;
        report.max_full_deviation = report.max_full_deviation.max((likelihood_full(&x, &y, &win, t)? - dense).abs());
        let mut truncated = x.clone();
        for (i, j) in pairs(n) {
            if !(win.contains(i) && win.contains(j)) {
                truncated.set(i, j, 0.0);
            }
        }
        let dense_w = densesim::iqle_outcome_prob_dense(&truncated, &y, &win, t)?;
        report.max_windowed_deviation = report
            .max_windowed_deviation
            .max((likelihood_windowed(&x, &y, &win, t)? - dense_w).abs());
    }
    Ok(report)
}

pub const ORACLE_TOLERANCE: f64 = 1e-10;

pub fn cmd_oracle_check(config: &RunConfig) -> Result<i32> {
    let report = oracle_check(config)?;
    let pass = report.passes(ORACLE_TOLERANCE);
    println!(
        "{} instances: max deviation full {:.3e}, windowed {:.3e} -> {}",
        report.instances,
        report.max_full_deviation,
        report.max_windowed_deviation,
        if pass { "pass" } else { "FAIL" }
    );
    write_json(config, "oracle_check.json", &report)?;
    Ok(if pass { 0 } else { 1 })
}

/// Relative slack on the Fisher bound absorbing finite-difference error.
pub const FISHER_RELATIVE_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct FisherReport {
    pub evaluations: usize,
    pub undefined: usize,
    pub violations: usize,
    /// Largest `|I_ij| / 4t²`.
    pub max_ratio_to_bound: f64,
    pub max_asymmetry: f64,
    pub min_eigenvalue: f64,
    pub small_t: f64,
    pub scaling_ratios: Vec<f64>,
}

impl FisherReport {
    pub fn scaling_ok(&self, lo: f64, hi: f64) -> bool {
        !self.scaling_ratios.is_empty() && self.scaling_ratios.iter().all(|r| (lo..=hi).contains(r))
    }
}

pub fn fisher_check(config: &RunConfig) -> Result<FisherReport> {
    let v = &config.verify;
    let mut rng = stream(config.seed, "fisher", 0);
    let h_step = 1e-4;
    let mut report = FisherReport {
        evaluations: 0,
        undefined: 0,
        violations: 0,
        max_ratio_to_bound: 0.0,
        max_asymmetry: 0.0,
        min_eigenvalue: f64::INFINITY,
        small_t: v.fisher_small_t,
        scaling_ratios: Vec::new(),
    };
    for _ in 0..v.fisher_instances {
        let n = rng.gen_range(2..=6);
        let win = random_window(&mut rng, n, 3)?;
        let x = flat_couplings(&mut rng, n);
        let y = flat_couplings(&mut rng, n);
        for &t in &v.fisher_times {
            let f = densesim::fisher_numeric(&x, &y, &win, t, h_step)?;
            report.evaluations += 1;
            if f.undefined {
                report.undefined += 1;
                continue;
            }
            let bound = bounds::fisher_bound(1.0, 1.0, t);
            for val in f.values.iter() {
                if val.abs() > bound * (1.0 + FISHER_RELATIVE_SLACK) + 1e-12 {
                    report.violations += 1;
                }
                if bound > 0.0 {
                    report.max_ratio_to_bound = report.max_ratio_to_bound.max(val.abs() / bound);
                }
            }
            report.max_asymmetry = report.max_asymmetry.max((&f.values - f.values.transpose()).amax());
            let eig = f.values.clone().symmetric_eigenvalues();
            report.min_eigenvalue = report.min_eigenvalue.min(eig.min());
        }
        let small = densesim::fisher_numeric(&x, &y, &win, v.fisher_small_t, h_step)?;
        let double = densesim::fisher_numeric(&x, &y, &win, 2.0 * v.fisher_small_t, h_step)?;
        if !small.undefined && !double.undefined {
            let tr_small = small.values.trace();
            if tr_small > 1e-300 {
                report.scaling_ratios.push(double.values.trace() / tr_small);
            }
        }
    }
    Ok(report)
}

pub fn cmd_fisher(config: &RunConfig) -> Result<i32> {
    let report = fisher_check(config)?;
    let pass = report.violations == 0 && report.scaling_ok(3.96, 4.04);
    println!(
        "{} evaluations ({} undefined): {} violations, max |I|/4t^2 = {:.6}, small-t ratios in [{:.4}, {:.4}] -> {}",
        report.evaluations,
        report.undefined,
        report.violations,
        report.max_ratio_to_bound,
        report.scaling_ratios.iter().copied().fold(f64::INFINITY, f64::min),
        report.scaling_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        if pass { "pass" } else { "FAIL" }
    );
    write_json(config, "fisher.json", &report)?;
    Ok(if pass { 0 } else { 1 })
}

#[derive(Clone, Debug, Serialize)]
pub struct CommutingReport {
    pub instances: usize,
    pub checks: usize,
    pub violations: usize,
    pub min_margin: f64,
    pub max_measured: f64,
    /// Smallest `‖H_int∩A‖` among the instances.
    pub min_h_int_a: f64,
}

/// Diagonal models: measured truncation error against the commuting bound.
pub fn commuting_bound_check(config: &RunConfig) -> Result<CommutingReport> {
    let v = &config.verify;
    let mut rng = stream(config.seed, "commuting-bound", 0);
    let mut report = CommutingReport {
        instances: v.commuting_instances,
        checks: 0,
        violations: 0,
        min_margin: f64::INFINITY,
        max_measured: 0.0,
        min_h_int_a: f64::INFINITY,
    };
    let mut done = 0;
    while done < v.commuting_instances {
        let n = rng.gen_range(4..=8);
        let win = random_window(&mut rng, n, 3)?;
        if win.width() == n {
            continue;
        }
        // Larger long-range couplings than the learning prior so that the
        // leakage term is visible.
        let prior = PriorSpec::ExponentialDecayUniform { b: 1.0 };
        let mut x = prior.sample(&mut rng, n);
        for (i, j) in pairs(n) {
            x.set(i, j, x.get(i, j) + 0.2 * rng.gen::<f64>());
        }
        let y = prior.sample(&mut rng, n);
        for c in densesim::commuting_truncation_check(&x, &y, &win, &v.commuting_times)? {
            report.checks += 1;
            if c.measured > c.bound + densesim::RECURSION_SLACK {
                report.violations += 1;
            }
            report.min_margin = report.min_margin.min(c.bound - c.measured);
            report.max_measured = report.max_measured.max(c.measured);
            report.min_h_int_a = report.min_h_int_a.min(c.h_int_a);
        }
        done += 1;
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct RecursionSummary {
    pub instance: usize,
    pub t: f64,
    pub r: u32,
    pub final_error: f64,
    pub margin: f64,
    pub violations: usize,
    /// Bound with fitted Lieb–Robinson constants; diagnostic only.
    pub fitted_bound: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LiebRobinsonReport {
    pub n: usize,
    pub runs: Vec<RecursionSummary>,
    pub violations: usize,
    pub fitted_bound_violations: usize,
    pub commuting: CommutingReport,
}

/// Transverse-field Ising instances: the one-step swap recursion with exact
/// norms at every step, plus the commuting-model bound.
pub fn verify_lieb_robinson(config: &RunConfig) -> Result<LiebRobinsonReport> {
    let v = &config.verify;
    let n = v.lr_n;
    let mut rng = stream(config.seed, "verify-lr", 0);
    let mut runs = Vec::new();
    for instance in 0..v.lr_instances {
        let a = 2;
        let pos = rng.gen_range(1..n - a);
        let win = place_window(n, a, n - 2, pos)?;
        let x = config.prior.sample(&mut rng, n);
        let (h, h_minus) = densesim::transverse_ising_instance(&mut rng, &x, &win, v.lr_max_field, v.lr_inversion_noise)?;
        let sys = RSwapSystem::new(&h, &h_minus, &win)?;
        let a_op = densesim::plus_projector(n, win.a_lo, win.a_hi)?;
        let dist = (win.a_lo - win.lo).min(win.hi - win.a_hi).max(1) as f64;
        let samples = densesim::lieb_robinson_samples(&sys, &a_op, &v.lr_times);
        let fit = densesim::fit_lieb_robinson(&samples, 2.0 * sys.norms.h_int_not_a * a as f64, dist);
        for &t in &v.lr_times {
            for &r in &v.lr_swaps {
                let rep = sys.check_recursion(&a_op, 1.0, t, r)?;
                let fitted_bound =
                    fit.map(|f| bounds::noncommuting_truncation_bound(&sys.norms, 1.0, a as f64, f.s, f.mu, dist, t, r));
                runs.push(RecursionSummary {
                    instance,
                    t,
                    r,
                    final_error: rep.final_error(),
                    margin: rep.margin(),
                    violations: rep.violations(),
                    fitted_bound,
                });
            }
        }
        log::info!("recursion instance {instance} done");
    }
    Ok(LiebRobinsonReport {
        n,
        violations: runs.iter().map(|r| r.violations).sum(),
        fitted_bound_violations: runs
            .iter()
            .filter(|r| r.fitted_bound.is_some_and(|b| r.final_error > b))
            .count(),
        runs,
        commuting: commuting_bound_check(config)?,
    })
}

pub fn cmd_verify_lr(config: &RunConfig) -> Result<i32> {
    let report = verify_lieb_robinson(config)?;
    let pass = report.violations == 0 && report.commuting.violations == 0;
    println!(
        "swap recursion: {} runs, {} violations; commuting bound: {} checks, {} violations; fitted-constant bound exceeded {} times (diagnostic) -> {}",
        report.runs.len(),
        report.violations,
        report.commuting.checks,
        report.commuting.violations,
        report.fitted_bound_violations,
        if pass { "pass" } else { "FAIL" }
    );
    write_json(config, "verify_lr.json", &report)?;
    Ok(if pass { 0 } else { 1 })
}

// ------------------------------------------------------------------ scaling

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub repetitions: usize,
    pub median_error: f64,
    pub q1_error: f64,
    pub q3_error: f64,
    pub median_prior_error: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn run_scaling(config: &RunConfig) -> Result<Vec<ScalingRow>> {
    let reps = config.scaling.repetitions;
    let mut rows = Vec::new();
    for &n in &config.scaling.n_values {
        if reps == 0 {
            continue;
        }
        let mut errs = Vec::with_capacity(reps);
        let mut prior_errs = Vec::with_capacity(reps);
        for r in 0..reps {
            let out = run_learning(config, n, ((n as u64) << 32) | r as u64)?;
            errs.push(out.final_error);
            prior_errs.push(out.prior_mean_error);
        }
        errs.sort_by(f64::total_cmp);
        log::info!("n = {n}: median error {:.4e}", quantile(&errs, 0.5));
        rows.push(ScalingRow {
            n,
            repetitions: reps,
            median_error: quantile(&errs, 0.5),
            q1_error: quantile(&errs, 0.25),
            q3_error: quantile(&errs, 0.75),
            median_prior_error: bootstrap::median(&prior_errs),
        });
    }
    Ok(rows)
}

pub fn cmd_scaling(config: &RunConfig) -> Result<i32> {
    let rows = run_scaling(config)?;
    let (path, hash) = write_csv_rows(
        config,
        "scaling.csv",
        &["n", "repetitions", "median_error", "q1_error", "q3_error", "median_prior_error"],
        &rows,
    )?;
    #[derive(Serialize)]
    struct Body {
        rows: Vec<ScalingRow>,
        scaling_csv: String,
        scaling_sha256: String,
    }
    for r in &rows {
        println!("n = {:>3}: median error {:.4e} [{:.4e}, {:.4e}]", r.n, r.median_error, r.q1_error, r.q3_error);
    }
    write_json(
        config,
        "scaling_summary.json",
        &Body {
            rows,
            scaling_csv: path.display().to_string(),
            scaling_sha256: hash,
        },
    )?;
    Ok(0)
}

// --------------------------------------------------------------- front end

#[derive(Debug, Parser)]
#[command(name = "cqhl", version, about = "Compressed Hamiltonian learning and bootstrapping for Ising chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a hidden chain with a scanning window.
    Learn(Overrides),
    /// Learn a crosstalk control map and calibrate nearest-neighbor targets.
    Bootstrap(Overrides),
    /// Evaluate the closed-form bounds.
    Bounds(Overrides),
    /// Numerical Fisher information against its bound.
    Fisher(Overrides),
    /// Swap-protocol error recursion and commuting truncation bound.
    VerifyLr(Overrides),
    /// Closed-form likelihoods against dense simulation.
    OracleCheck(Overrides),
    /// Median learning error against chain length.
    Scaling(Overrides),
}

#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    /// JSON configuration file; missing keys take the tier defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub tier: Option<Tier>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub a: Option<usize>,
    #[arg(long)]
    pub w: Option<usize>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub experiments_per_scan: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub delta_trunc: Option<f64>,
    /// Use sampled likelihoods with this many draws per particle.
    #[arg(long)]
    pub likelihood_samples: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_enum)]
    pub learner: Option<LearnerKind>,
    /// Comma-separated chain lengths for `scaling`.
    #[arg(long, value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
    #[arg(long)]
    pub repetitions: Option<usize>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, self.tier) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(tier)) => RunConfig::for_tier(tier),
            (None, None) => RunConfig::desk(),
        };
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            };
        }
        set!(n);
        set!(a);
        set!(w);
        set!(particles);
        set!(experiments_per_scan);
        set!(seed);
        set!(delta_trunc);
        if let Some(tier) = self.tier {
            cfg.tier = tier;
        }
        if let Some(samples) = self.likelihood_samples {
            cfg.likelihood_mode = LikelihoodMode::Sampled { samples };
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if let Some(l) = self.learner {
            cfg.bootstrap.learner = l;
        }
        if let Some(ns) = &self.n_values {
            cfg.scaling.n_values = ns.clone();
        }
        if let Some(r) = self.repetitions {
            cfg.scaling.repetitions = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::InvalidConfig(_) | Error::InvalidGeometry(_) | Error::CapExceeded { .. })
}

/// Exit status: 0 on success, 1 when a run fails or a check does not pass,
/// 2 for configuration errors.
pub fn run(cli: Cli) -> i32 {
    let (overrides, cmd): (&Overrides, fn(&RunConfig) -> Result<i32>) = match &cli.command {
        Command::Learn(o) => (o, cmd_learn),
        Command::Bootstrap(o) => (o, cmd_bootstrap),
        Command::Bounds(o) => (o, cmd_bounds),
        Command::Fisher(o) => (o, cmd_fisher),
        Command::VerifyLr(o) => (o, cmd_verify_lr),
        Command::OracleCheck(o) => (o, cmd_oracle_check),
        Command::Scaling(o) => (o, cmd_scaling),
    };
    let config = match overrides.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return 2;
        }
    };
    if let Some(threads) = config.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match cmd(&config) {
        Ok(code) => code,
        Err(e) if is_config_error(&e) => {
            eprintln!("configuration error: {e}");
            2
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            1
        }
    }
}

/// Parses `args` and runs; clap usage errors map to exit status 2.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}

/// Envelope of the configured prior, for callers choosing time caps.
pub fn decay_envelope(config: &RunConfig) -> DecayEnvelope {
    config.prior.envelope()
}

//! The acceptance scenarios. Each criterion is a list of checks; a
//! criterion passes when all of its checks do. A tolerance scale multiplies
//! every tolerance of a criterion, so a scale of zero fails it.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::bohm::{self, integrate_trajectories, sample_initial_positions, TrajectoryOptions};
use crate::intrinsics::{self, CurrentConfig, LagWindow};
use crate::measure::{self, AncillaModel, EstimatorMode, ProtocolConfig, SecondMeasurement};
use crate::qgrid::{
    build_hamiltonian, expectation, propagate, propagate_frames, Envelope, Grid1D, Kinetic, Method, PotentialModel,
    PropagatorConfig, SpectralOperator, Units, WaveFunction,
};
use crate::weakval::{self, DwellOptions};

/// How a measured value is compared with its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `|measured - target| < tolerance`.
    Within,
    /// `measured > target`.
    Above,
    /// `measured >= target`.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub target: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub passed: bool,
}

impl Check {
    fn within(name: &str, measured: f64, target: f64, tolerance: f64) -> Self {
        Self { name: name.into(), measured, target, tolerance, relation: Relation::Within, passed: false }
    }

    fn above(name: &str, measured: f64, target: f64) -> Self {
        Self { name: name.into(), measured, target, tolerance: 0.0, relation: Relation::Above, passed: false }
    }

    fn at_least(name: &str, measured: f64, target: f64) -> Self {
        Self { name: name.into(), measured, target, tolerance: 0.0, relation: Relation::AtLeast, passed: false }
    }

    fn evaluate(mut self, scale: f64) -> Self {
        self.tolerance *= scale;
        self.passed = match self.relation {
            Relation::Within => (self.measured - self.target).abs() < self.tolerance,
            Relation::Above => self.measured > self.target,
            Relation::AtLeast => self.measured >= self.target,
        };
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: u32,
    pub name: String,
    /// First check, repeated for a one-line summary. NaN (JSON null) when
    /// the scenario errored.
    #[serde(deserialize_with = "null_as_nan")]
    pub measured: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub target: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub tolerance: f64,
    pub passed: bool,
    pub runtime_s: f64,
    pub checks: Vec<Check>,
    /// Scenario failure, if the pipeline itself errored.
    pub error: Option<String>,
    pub details: BTreeMap<String, serde_json::Value>,
}

fn null_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl CriterionReport {
    pub fn summary_line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        match &self.error {
            Some(e) => format!("[{verdict}] criterion {:>2} {}: error: {e}", self.id, self.name),
            None => format!(
                "[{verdict}] criterion {:>2} {}: measured {:.6e}, target {:.6e}, tolerance {:.3e} ({} checks, {:.1} s)",
                self.id,
                self.name,
                self.measured,
                self.target,
                self.tolerance,
                self.checks.len(),
                self.runtime_s
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub criteria: Vec<CriterionReport>,
    pub all_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationOptions {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Per-criterion multiplier on every tolerance.
    #[serde(default)]
    pub tolerance_scale: BTreeMap<u32, f64>,
    /// Criteria to run; empty runs all.
    #[serde(default)]
    pub only: Vec<u32>,
}

fn default_seed() -> u64 {
    crate::seed::DEFAULT_SEED
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self { seed: default_seed(), tolerance_scale: BTreeMap::new(), only: Vec::new() }
    }
}

pub const CRITERIA: [(u32, &str); 12] = [
    (1, "one-time apparatus independence"),
    (2, "eigenstate two-time factorization"),
    (3, "ideal-weak convergence"),
    (4, "contextuality witness"),
    (5, "operational estimator to weak value"),
    (6, "ancilla moment identities"),
    (7, "perturbation crossover"),
    (8, "quantum equilibrium and trajectories"),
    (9, "energy decomposition and power balance"),
    (10, "work properties"),
    (11, "dwell-time triple agreement"),
    (12, "PSD sanity"),
];

type Outcome = Result<(Vec<Check>, Details), Box<dyn std::error::Error + Send + Sync>>;
type Details = BTreeMap<String, serde_json::Value>;

/// Runs one criterion and evaluates its checks under `scale`.
pub fn run_criterion(id: u32, seed: u64, scale: f64) -> CriterionReport {
    let name = CRITERIA.iter().find(|c| c.0 == id).map(|c| c.1).unwrap_or("unknown").to_string();
    let start = Instant::now();
    let outcome: Outcome = match id {
        1 => c1_one_time(),
        2 => c2_eigenstate(),
        3 => c3_convergence(),
        4 => c4_contextuality(),
        5 => c5_operational(seed),
        6 => c6_moments(),
        7 => c7_crossover(),
        8 => c8_equilibrium(seed),
        9 => c9_energy(seed),
        10 => c10_work(seed),
        11 => c11_dwell(seed),
        12 => c12_psd(seed),
        _ => Err(format!("no criterion {id}").into()),
    };
    let runtime_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok((checks, details)) => {
            let checks: Vec<Check> = checks.into_iter().map(|c| c.evaluate(scale)).collect();
            let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
            let first = checks.first().cloned().unwrap_or_else(|| Check::within("none", f64::NAN, f64::NAN, 0.0));
            CriterionReport {
                id,
                name,
                measured: first.measured,
                target: first.target,
                tolerance: first.tolerance,
                passed,
                runtime_s,
                checks,
                error: None,
                details,
            }
        }
        Err(e) => CriterionReport {
            id,
            name,
            measured: f64::NAN,
            target: f64::NAN,
            tolerance: f64::NAN,
            passed: false,
            runtime_s,
            checks: Vec::new(),
            error: Some(e.to_string()),
            details: Details::new(),
        },
    }
}

/// Runs the selected criteria in order. Failures are report entries.
pub fn validate_all(opts: &ValidationOptions) -> ValidationReport {
    let criteria: Vec<CriterionReport> = CRITERIA
        .iter()
        .filter(|(id, _)| opts.only.is_empty() || opts.only.contains(id))
        .map(|&(id, _)| run_criterion(id, opts.seed, opts.tolerance_scale.get(&id).copied().unwrap_or(1.0)))
        .collect();
    let all_passed = criteria.iter().all(|c| c.passed);
    ValidationReport { seed: opts.seed, criteria, all_passed }
}

fn detail(d: &mut Details, key: &str, v: impl Serialize) {
    d.insert(key.into(), serde_json::to_value(v).unwrap_or(serde_json::Value::Null));
}

/// Harmonic well (omega 1, centre 1) with `S = H` on its six lowest levels
/// and `G = x`.
struct TwoLevelSetup {
    psi: WaveFunction,
    cfg: ProtocolConfig,
    /// Eigenvalue span of the populated levels.
    delta_s: f64,
}

fn harmonic_setup(coeffs: &[C64], lambda: f64) -> Result<TwoLevelSetup, Box<dyn std::error::Error + Send + Sync>> {
    let grid = Grid1D::centered(10.0, 128)?;
    let units = Units::default();
    let potential = PotentialModel::Harmonic { omega: 1.0, center: 1.0 };
    let h = build_hamiltonian(&grid, &potential, 0.0, &units, Kinetic::Spectral)?.truncated(6);
    let mut amps = vec![C64::new(0.0, 0.0); grid.len()];
    let values = h.eigenvalues()?;
    let mut populated = Vec::new();
    for (i, c) in coeffs.iter().enumerate() {
        if c.norm() > 0.0 {
            populated.push(values[i]);
            for (a, f) in amps.iter_mut().zip(h.eigenfunction(i)?) {
                *a += c * f;
            }
        }
    }
    let mut psi = WaveFunction::new(grid, amps, 0.0)?;
    psi.normalize()?;
    let lo = populated.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = populated.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cfg = ProtocolConfig {
        s: h,
        g: SpectralOperator::position(grid),
        potential,
        units,
        propagator: PropagatorConfig::new(0.01, Method::SplitOperator, 10),
        duration: 0.7,
        ancilla: AncillaModel::new(1.0, lambda)?,
        second: SecondMeasurement::Projective,
        n: 1,
        seed: 0,
    };
    Ok(TwoLevelSetup { psi, cfg, delta_s: (hi - lo).max(1.0) })
}

fn superposition() -> Vec<C64> {
    vec![C64::new(0.6, 0.0), C64::new(0.0, 0.5), C64::new(-0.3, 0.4)]
}

fn c1_one_time() -> Outcome {
    let lambda = 0.5;
    let setup = harmonic_setup(&superposition(), lambda)?;
    let target = lambda * expectation(&setup.cfg.s, &setup.psi)?;
    let mut checks = Vec::new();
    let mut d = Details::new();
    for r in [0.1, 1.0, 10.0] {
        let anc = AncillaModel::new(r * lambda * setup.delta_s, lambda)?;
        let ent = measure::premeasure(&setup.psi, &setup.cfg.s, &anc)?;
        let mean = measure::readout_marginal(&ent)?.mean();
        checks.push(Check::within(&format!("mean readout, sigma/(lambda ds) = {r}"), mean, target, 1e-6));
    }
    detail(&mut d, "delta_s", setup.delta_s);
    Ok((checks, d))
}

fn c2_eigenstate() -> Outcome {
    let lambda = 0.5;
    let mut setup = harmonic_setup(&[C64::new(0.0, 0.0), C64::new(1.0, 0.0)], lambda)?;
    let s_k = setup.cfg.s.eigenvalues()?[1];
    let evolved =
        propagate(&setup.psi, &setup.cfg.potential, &setup.cfg.units, &setup.cfg.propagator, setup.cfg.duration)?;
    let g_t2 = expectation(&setup.cfg.g, &evolved)?;
    let target = lambda * lambda * s_k * g_t2;
    let mut checks = Vec::new();
    let mut values = Vec::new();
    for r in [0.1, 1.0, 10.0] {
        setup.cfg.ancilla = AncillaModel::new(r * lambda, lambda)?;
        let c = measure::two_time_correlation(&measure::two_time_joint(&setup.psi, &setup.cfg)?);
        values.push(c);
        checks.push(Check::within(&format!("correlation, sigma/lambda = {r}"), c, target, 1e-6));
    }
    let spread =
        values.iter().copied().fold(f64::NEG_INFINITY, f64::max) - values.iter().copied().fold(f64::INFINITY, f64::min);
    checks.push(Check::within("spread over sigma", spread, 0.0, 1e-6));
    let mut d = Details::new();
    detail(&mut d, "s_k", s_k);
    detail(&mut d, "g_t2", g_t2);
    Ok((checks, d))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn c3_convergence() -> Outcome {
    let lambda = 0.5;
    let mut setup = harmonic_setup(&superposition(), lambda)?;
    let ideal = measure::ideal_weak_correlation(&setup.psi, &setup.cfg)? / (lambda * lambda);
    let ratios: Vec<f64> = (0..7).map(|i| 3.0 * 10f64.powf(i as f64 / 6.0)).collect();
    let mut errors = Vec::new();
    for &r in &ratios {
        setup.cfg.ancilla = AncillaModel::new(r * lambda * setup.delta_s, lambda)?;
        let c = measure::two_time_correlation(&measure::two_time_joint(&setup.psi, &setup.cfg)?);
        errors.push((c / (lambda * lambda) - ideal).abs());
    }
    let slope = log_log_slope(&ratios, &errors);
    let mut d = Details::new();
    detail(&mut d, "ratios", &ratios);
    detail(&mut d, "errors", &errors);
    detail(&mut d, "ideal", ideal);
    Ok((vec![Check::within("log-log slope", slope, -2.0, 0.2)], d))
}

/// Quadrature tolerance of the joint-distribution correlation.
const QUADRATURE_TOLERANCE: f64 = 1e-6;

fn c4_contextuality() -> Outcome {
    let lambda = 0.5;
    let mut setup = harmonic_setup(&superposition(), lambda)?;
    let mut corr = Vec::new();
    let mut means = Vec::new();
    for r in [0.3, 3.0] {
        setup.cfg.ancilla = AncillaModel::new(r * lambda * setup.delta_s, lambda)?;
        corr.push(measure::two_time_correlation(&measure::two_time_joint(&setup.psi, &setup.cfg)?));
        let ent = measure::premeasure(&setup.psi, &setup.cfg.s, &setup.cfg.ancilla)?;
        means.push(measure::readout_marginal(&ent)?.mean());
    }
    let mut d = Details::new();
    detail(&mut d, "correlations", &corr);
    detail(&mut d, "means", &means);
    Ok((
        vec![
            Check::within("one-time means agree", means[0], means[1], 1e-6),
            Check::above("correlation difference", (corr[0] - corr[1]).abs(), 10.0 * QUADRATURE_TOLERANCE),
        ],
        d,
    ))
}

fn c5_operational(seed: u64) -> Outcome {
    let grid = Grid1D::centered(20.0, 256)?;
    let units = Units::default();
    let psi = WaveFunction::gaussian(grid, -2.0, 1.0, 1.5)?;
    let s = SpectralOperator::momentum(grid, units);
    let lambda = 1.0;
    let probe = measure::premeasure(&psi, &s, &AncillaModel::new(1.0, lambda)?)?;
    let p_max = probe.s_max();
    let duration = 1.0;
    let cfg = ProtocolConfig {
        s: s.clone(),
        g: SpectralOperator::position(grid),
        potential: PotentialModel::Free,
        units,
        propagator: PropagatorConfig::new(0.01, Method::SplitOperator, 10),
        duration,
        ancilla: AncillaModel::new(10.0 * lambda * p_max, lambda)?,
        second: SecondMeasurement::Projective,
        n: 1_000_000,
        seed,
    };
    // packet centre at t2 plus half a width
    let g_a = grid.x(grid.nearest_index(-2.0 + 1.5 * duration + 0.5));
    let prep = measure::prepare(&psi, &cfg)?;
    let exact = measure::estimate_from_prepared(&prep, &cfg, g_a, EstimatorMode::Exact, false)?;
    let mc = measure::estimate_from_prepared(&prep, &cfg, g_a, EstimatorMode::MonteCarlo, false)?;
    let psi_t2 = propagate(&psi, &PotentialModel::Free, &units, &cfg.propagator, duration)?;
    let aav = weakval::aav_weak_value(&s, &psi_t2, g_a)?.re;
    let mv = units.mass * bohm::velocity_field(&psi_t2, g_a, &units)?;
    let mut d = Details::new();
    detail(&mut d, "post_selection_x", g_a);
    detail(&mut d, "p_max", p_max);
    detail(&mut d, "exact", exact.value);
    detail(&mut d, "monte_carlo", &mc);
    detail(&mut d, "aav", aav);
    detail(&mut d, "m_v_bohm", mv);
    Ok((
        vec![
            Check::within("exact vs Re AAV (relative)", (exact.value - aav) / aav, 0.0, 0.02),
            Check::within("Monte Carlo vs exact", mc.value, exact.value, 3.0 * mc.stderr),
            Check::within("m v_Bohm vs Re AAV (relative)", (mv - aav) / aav, 0.0, 1e-8),
        ],
        d,
    ))
}

fn c6_moments() -> Outcome {
    let anc = AncillaModel::new(1.0, 0.1)?;
    let pairs = [(0.5, 1.5), (1.5, 2.5), (0.5, 2.5), (2.5, 2.5), (-3.0, 4.0)];
    let r = measure::ancilla_moment_checks(&anc, &pairs)?;
    let mut checks = vec![
        Check::within("int y a a'", r.y_a_da, -0.5, 1e-8),
        Check::within("int y a'^2", r.y_da_da, 0.0, 1e-8),
        Check::within("int y a^2", r.y_a_a, 0.0, 1e-8),
    ];
    for o in &r.overlaps {
        let bound = (o.exact - o.taylor).abs() + 1e-10;
        checks.push(Check::within(
            &format!("shifted overlap ({}, {}) vs Taylor", o.s_i, o.s_j),
            o.numeric,
            o.taylor,
            bound,
        ));
        checks.push(Check::within(
            &format!("shifted overlap ({}, {}) vs exact", o.s_i, o.s_j),
            o.numeric,
            o.exact,
            1e-10,
        ));
    }
    let mut d = Details::new();
    detail(&mut d, "report", &r);
    Ok((checks, d))
}

fn c7_crossover() -> Outcome {
    let lambda = 0.1;
    let mut setup = harmonic_setup(&superposition(), lambda)?;
    setup.cfg.ancilla = AncillaModel::new(10.0, lambda)?;
    let y = setup.cfg.ancilla.sigma.powi(2) / lambda;
    let terms = measure::perturbation_decomposition(&setup.psi, &setup.cfg, y, y)?;
    let ratio = terms.ratio_14();
    let mut d = Details::new();
    detail(&mut d, "terms", terms);
    detail(&mut d, "ratio_14", ratio);
    Ok((vec![Check::within("|ln(term1 / term4)|", ratio.ln().abs(), 0.0, 4f64.ln())], d))
}

fn c8_equilibrium(seed: u64) -> Outcome {
    let grid = Grid1D::centered(20.0, 512)?;
    let units = Units::default();
    let sigma0 = 1.0;
    let psi = WaveFunction::gaussian(grid, 0.0, sigma0, 0.0)?;
    let cfg = PropagatorConfig::new(0.005, Method::SplitOperator, 10);
    let ev = propagate_frames(&psi, &PotentialModel::Free, &units, &cfg, 3.0)?;
    let starts = sample_initial_positions(&psi, 10_000, seed);
    let ens = integrate_trajectories(&ev, &starts, TrajectoryOptions { seed, ..Default::default() })?;
    let l1: Vec<f64> = (0..ev.len()).map(|k| bohm::equivariance_l1(&ens, &ev, k, 20)).collect();
    let max_l1 = l1.iter().copied().fold(0.0, f64::max);
    let mut max_rel = 0.0f64;
    for tr in &ens.trajectories {
        for (t, x) in tr.times.iter().zip(&tr.positions) {
            let s = (1.0 + (units.hbar * t / (2.0 * units.mass * sigma0 * sigma0)).powi(2)).sqrt();
            let oracle = tr.positions[0] * s;
            if oracle.abs() > 1e-12 {
                max_rel = max_rel.max(((x - oracle) / oracle).abs());
            }
        }
    }
    let crossings = if ens.is_order_preserving() { 0.0 } else { 1.0 };
    let mut d = Details::new();
    detail(&mut d, "l1_per_frame", &l1);
    detail(&mut d, "truncated", ens.truncated_count());
    Ok((
        vec![
            Check::within("max L1 over frames", max_l1, 0.0, 0.05),
            Check::within("max relative deviation from x0 sigma(t)/sigma0", max_rel, 0.0, 1e-3),
            Check::within("ordering violations", crossings, 0.0, 0.5),
        ],
        d,
    ))
}

fn c9_energy(seed: u64) -> Outcome {
    let units = Units::default();
    // local energy on an evolved, displaced packet in a soft well
    let grid = Grid1D::centered(15.0, 256)?;
    let well = PotentialModel::Harmonic { omega: 0.5, center: 0.0 };
    let psi = WaveFunction::gaussian(grid, 1.0, 0.8, 1.0)?;
    let psi = propagate(&psi, &well, &units, &PropagatorConfig::new(0.01, Method::SplitOperator, 10), 1.0)?;
    let res = weakval::energy_decomposition_residual(&psi, &well, &units)?;
    let worst = res.iter().flatten().fold(0.0f64, |m, r| m.max(r.abs()));
    let nodes = res.iter().filter(|r| r.is_none()).count();

    // power balance on a driven packet, fine frames subsampled to h and h/2
    let grid = Grid1D::centered(30.0, 512)?;
    let drive = PotentialModel::Drive { amplitude: 0.5, t_on: 0.0, t_off: 4.0, envelope: Envelope::SinSquared };
    let psi0 = WaveFunction::gaussian(grid, 0.0, 1.0, 0.5)?;
    let fine_cfg = PropagatorConfig::new(0.00125, Method::SplitOperator, 10);
    let ev = propagate_frames(&psi0, &drive, &units, &fine_cfg, 3.0)?;
    let starts = sample_initial_positions(&psi0, 8, seed);
    let ens = integrate_trajectories(&ev, &starts, TrajectoryOptions { substeps: 4, seed })?;
    let t = 2.0;
    let rms = |stride: usize| -> Result<f64, intrinsics::IntrinsicsError> {
        let sub = ev.subsample(stride);
        let mut acc = 0.0;
        for tr in &ens.trajectories {
            let r = intrinsics::power_balance_residual(&sub, &tr.subsample(stride), t)?;
            acc += r * r;
        }
        Ok((acc / ens.len() as f64).sqrt())
    };
    let (coarse, fine) = (rms(8)?, rms(4)?);
    let ratio = coarse / fine;
    let mut d = Details::new();
    detail(&mut d, "nodes_excluded", nodes);
    detail(&mut d, "residual_rms_h", coarse);
    detail(&mut d, "residual_rms_h_half", fine);
    detail(&mut d, "h", ev.dt_out() * 8.0);
    Ok((
        vec![
            Check::within("max |E_local - Q - m v^2/2 - V|", worst, 0.0, 1e-6),
            Check::within("power-balance residual ratio under halving", ratio, 4.0, 0.5),
        ],
        d,
    ))
}

fn c10_work(seed: u64) -> Outcome {
    let units = Units::default();
    let grid = Grid1D::centered(30.0, 512)?;
    let drive = PotentialModel::Drive { amplitude: 0.5, t_on: 0.5, t_off: 2.5, envelope: Envelope::SinSquared };
    let psi0 = WaveFunction::gaussian(grid, 0.0, 1.0, 0.0)?;
    let cfg = PropagatorConfig::new(0.005, Method::SplitOperator, 10);
    let (t1, t2) = (0.0, 3.0);
    let ev = propagate_frames(&psi0, &drive, &units, &cfg, t2)?;
    let starts = sample_initial_positions(&psi0, 10_000, seed);
    let ens = integrate_trajectories(&ev, &starts, TrajectoryOptions { seed, ..Default::default() })?;
    let records = intrinsics::work_ensemble(&ev, &ens.trajectories, t1, t2)?;
    let dist = intrinsics::work_distribution(&records)?;
    let h_at = |k: usize| -> Result<f64, crate::qgrid::QgridError> {
        let f = ev.frame(k);
        expectation(&build_hamiltonian(&grid, &drive, f.time(), &units, Kinetic::Spectral)?, f)
    };
    let dh = h_at(ev.len() - 1)? - h_at(0)?;

    // time-independent eigenstate: Bohmian work and the two-point measurement
    let well = PotentialModel::Harmonic { omega: 1.0, center: 0.0 };
    let g2 = Grid1D::centered(10.0, 256)?;
    let h = build_hamiltonian(&g2, &well, 0.0, &units, Kinetic::Stencil3)?.truncated(12);
    let eig = WaveFunction::new(g2, h.eigenfunction(1)?, 0.0)?;
    let cn = PropagatorConfig::new(0.01, Method::CrankNicolson, 10);
    let ev2 = propagate_frames(&eig, &well, &units, &cn, 2.0)?;
    let ens2 = integrate_trajectories(
        &ev2,
        &sample_initial_positions(&eig, 1000, seed),
        TrajectoryOptions { seed, ..Default::default() },
    )?;
    let rec2 = intrinsics::work_ensemble(&ev2, &ens2.trajectories, 0.0, 2.0)?;
    let dist2 = intrinsics::work_distribution(&rec2)?;
    let max_w = rec2.iter().filter(|r| !r.flagged).fold(0.0f64, |m, r| m.max(r.work.abs()));
    let tpm = two_point_zero_mass(&eig, &h, &well, &units, &cn, 2.0)?;
    let min_p = dist.probabilities.iter().chain(&dist2.probabilities).copied().fold(f64::INFINITY, f64::min);
    let mut d = Details::new();
    detail(&mut d, "mean_work", dist.mean);
    detail(&mut d, "stderr", dist.stderr);
    detail(&mut d, "delta_h", dh);
    detail(&mut d, "flagged", dist.flagged);
    detail(&mut d, "eigenstate_max_abs_work", max_w);
    detail(&mut d, "tpm_mass_at_zero", tpm);
    Ok((
        vec![
            Check::within("<W> vs <H(t2)> - <H(t1)>", dist.mean, dh, 3.0 * dist.stderr),
            Check::within("eigenstate max |W|", max_w, 0.0, 1e-6),
            Check::within("two-point-measurement mass at W = 0", tpm, 1.0, 1e-8),
            Check::at_least("min bin probability", min_p, 0.0),
        ],
        d,
    ))
}

/// Probability of zero work in the two-point energy measurement for a
/// time-independent Hamiltonian: `sum |<m|U|n>|^2 |c_n|^2` over `E_m = E_n`.
fn two_point_zero_mass(
    psi: &WaveFunction,
    h: &SpectralOperator,
    potential: &PotentialModel,
    units: &Units,
    cfg: &PropagatorConfig,
    duration: f64,
) -> Result<f64, Box<dyn std::error::Error + Send + Sync>> {
    let c = h.coefficients(psi.amplitudes())?;
    let e = h.eigenvalues()?;
    let mut mass = 0.0;
    for (n, cn) in c.iter().enumerate() {
        if cn.norm_sqr() < 1e-14 {
            continue;
        }
        let phi = WaveFunction::new(*psi.grid(), h.eigenfunction(n)?, 0.0)?;
        let evolved = propagate(&phi, potential, units, cfg, duration)?;
        let row = h.coefficients(evolved.amplitudes())?;
        for (m, a) in row.iter().enumerate() {
            if (e[m] - e[n]).abs() < 1e-9 {
                mass += a.norm_sqr() * cn.norm_sqr();
            }
        }
    }
    Ok(mass)
}

fn c11_dwell(seed: u64) -> Outcome {
    let units = Units::default();
    let grid = Grid1D::centered(60.0, 1024)?;
    let barrier = PotentialModel::Barrier { height: 1.5, left: 0.0, right: 1.0 };
    let region = (-4.0, 0.0);
    let horizon = 40.0;
    let psi0 = WaveFunction::gaussian(grid, -20.0, 4.0, 1.5)?;
    let cfg = PropagatorConfig::new(0.005, Method::SplitOperator, 10);
    let ev = propagate_frames(&psi0, &barrier, &units, &cfg, horizon)?;
    let starts = sample_initial_positions(&psi0, 10_000, seed);
    let ens = integrate_trajectories(&ev, &starts, TrajectoryOptions { seed, ..Default::default() })?;
    let taus = intrinsics::dwell_times(&ens, region, true)?;
    let traj = intrinsics::dwell_time_ensemble(&ens, region, true)?;
    let density = intrinsics::dwell_time_density(&ev, region, true)?;
    let op = weakval::dwell_operator_field(&psi0, &barrier, &units, region, horizon, &cfg, DwellOptions::default())?;
    let mut discrepancy: Vec<f64> =
        op.at_many(&starts).into_iter().zip(&taus).filter_map(|(w, tau)| w.ok().map(|w| (tau - w).abs())).collect();
    discrepancy.sort_by(f64::total_cmp);
    let q = |p: f64| discrepancy[((discrepancy.len() - 1) as f64 * p).round() as usize];
    let rel = |a: f64, b: f64| (a - b) / b;
    let mut d = Details::new();
    detail(&mut d, "trajectory", traj);
    detail(&mut d, "density", density);
    detail(&mut d, "operator_quadrature", op.quadrature);
    detail(&mut d, "operator_richardson_rel", op.richardson_rel);
    if let Ok(avg) = op.ensemble_average(&starts) {
        detail(&mut d, "operator_ensemble_average", avg);
    }
    let mut dist = BTreeMap::new();
    for (k, p) in [("median", 0.5), ("p10", 0.1), ("p90", 0.9), ("max", 1.0)] {
        dist.insert(k, q(p));
    }
    dist.insert("mean", discrepancy.iter().sum::<f64>() / discrepancy.len() as f64);
    detail(&mut d, "pointwise_discrepancy", dist);
    Ok((
        vec![
            Check::within("trajectories vs density (relative)", rel(traj.mean, density.value), 0.0, 0.02),
            Check::within("operator vs density (relative)", rel(op.quadrature, density.value), 0.0, 0.02),
            Check::within("trajectories vs operator (relative)", rel(traj.mean, op.quadrature), 0.0, 0.02),
        ],
        d,
    ))
}

fn c12_psd(seed: u64) -> Outcome {
    // coherent state oscillating in a harmonic well
    let units = Units::default();
    let grid = Grid1D::centered(10.0, 256)?;
    let well = PotentialModel::Harmonic { omega: 1.0, center: 0.0 };
    let psi0 = WaveFunction::gaussian(grid, 2.0, std::f64::consts::FRAC_1_SQRT_2, 0.0)?;
    let cfg = PropagatorConfig::new(0.01, Method::SplitOperator, 5);
    let ev = propagate_frames(&psi0, &well, &units, &cfg, 60.0)?;
    let ens = integrate_trajectories(
        &ev,
        &sample_initial_positions(&psi0, 200, seed),
        TrajectoryOptions { seed, ..Default::default() },
    )?;
    let traces = intrinsics::current_traces(&ev, &ens, &CurrentConfig::new(1.0, 1.0)?)?;
    let dt = ev.dt_out();
    let horizon = 15.0;
    let spec = intrinsics::psd(&traces.clean(), dt, horizon, LagWindow::None)?;
    let n = spec.values.len();
    let m = n / 2;
    let scale = spec.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let asym = (1..m).map(|j| (spec.values[m + j] - spec.values[m - j]).abs()).fold(0.0, f64::max) / scale;
    let zero_gap = spec.value_at_zero() - spec.correlation_integral();

    // synthetic cosine with random phases, off the frequency lattice
    let omega0 = 2.0;
    let samples = ev.len();
    let mut rng = crate::seed::stream(seed, crate::seed::SYNTHETIC, 0);
    let cosines: Vec<Vec<f64>> = (0..50)
        .map(|_| {
            let phase: f64 = rand::Rng::random::<f64>(&mut rng) * 2.0 * PI;
            (0..samples).map(|k| (omega0 * k as f64 * dt + phase).cos()).collect()
        })
        .collect();
    let syn = intrinsics::psd(&cosines, dt, horizon, LagWindow::None)?;
    let dw = syn.omega[1] - syn.omega[0];
    let peak = |range: &mut dyn Iterator<Item = usize>| -> f64 {
        let j = range.max_by(|&a, &b| syn.values[a].total_cmp(&syn.values[b])).expect("bins");
        syn.omega[j]
    };
    let sm = syn.values.len() / 2;
    let pos = peak(&mut (sm + 1..syn.values.len()));
    let neg = peak(&mut (0..sm));
    let phys_peak = {
        let j = (m + 1..n).max_by(|&a, &b| spec.values[a].total_cmp(&spec.values[b])).expect("bins");
        spec.omega[j]
    };
    let mut d = Details::new();
    detail(&mut d, "flagged_traces", traces.flagged);
    detail(&mut d, "psd_at_zero", spec.value_at_zero());
    detail(&mut d, "correlation_integral", spec.correlation_integral());
    detail(&mut d, "frequency_bin", dw);
    detail(&mut d, "current_peak_omega", phys_peak);
    Ok((
        vec![
            Check::within("relative asymmetry P(w) - P(-w)", asym, 0.0, 1e-8),
            Check::within("PSD(0) - int C", zero_gap, 0.0, 1e-6),
            Check::within("positive peak", pos, omega0, dw),
            Check::within("negative peak", neg, -omega0, dw),
        ],
        d,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_scale_fails_within_checks() {
        let c = Check::within("x", 1.0, 1.0, 1e-3).evaluate(0.0);
        assert!(!c.passed);
        assert!(Check::within("x", 1.0, 1.0, 1e-3).evaluate(1.0).passed);
        assert!(Check::above("x", 2.0, 1.0).evaluate(0.0).passed);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(-2)).collect();
        assert!((log_log_slope(&xs, &ys) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_criterion_is_a_failed_entry() {
        let r = run_criterion(99, 1, 1.0);
        assert!(!r.passed);
        assert!(r.error.is_some());
        let text = serde_json::to_string(&r).unwrap();
        let back: CriterionReport = serde_json::from_str(&text).unwrap();
        assert!(back.measured.is_nan());
    }
}

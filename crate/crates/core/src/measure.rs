//! Von Neumann measurement chain with a Gaussian ancilla: premeasurement,
//! readout, one- and two-time statistics, the ideal-weak limit, the
//! perturbative expansion of the collapsed state and the post-selected
//! (operational) weak-value estimator.
//!
//! The pointer is not represented: with unit pointer coupling the readout
//! acts on the ancilla position directly.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::qgrid::{propagate, PotentialModel, PropagatorConfig, QgridError, SpectralOperator, Units, WaveFunction};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeasureError {
    #[error("eigenbasis covers only {retained:.12} of the state weight")]
    BasisCoverage { retained: f64 },
    #[error("outcome grid too narrow: {mass:e} probability outside")]
    GridRange { mass: f64 },
    #[error("ancilla grid too coarse or narrow: deviation {deviation:e}")]
    AncillaGrid { deviation: f64 },
    #[error("post-selection probability {probability:e} below 10/N for N = {n}")]
    InsufficientStatistics { probability: f64, n: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] QgridError),
}

/// Weight that a truncated eigenbasis must retain.
pub const COVERAGE: f64 = 1.0 - 1e-8;
pub const MIN_OUTCOME_POINTS: usize = 1024;
pub const MOMENT_TOLERANCE: f64 = 1e-6;

/// Real Gaussian ancilla `a(y) = (pi s^2)^(-1/4) exp(-y^2 / 2 s^2)` with
/// coupling `lambda`. `|a|^2` has standard deviation `s / sqrt(2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AncillaModel {
    pub sigma: f64,
    pub lambda: f64,
    #[serde(default = "default_points")]
    pub min_points: usize,
}

fn default_points() -> usize {
    MIN_OUTCOME_POINTS
}

impl AncillaModel {
    pub fn new(sigma: f64, lambda: f64) -> Result<Self, MeasureError> {
        let a = Self { sigma, lambda, min_points: MIN_OUTCOME_POINTS };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(MeasureError::Config("ancilla sigma must be positive".into()));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(MeasureError::Config("coupling lambda must be non-negative".into()));
        }
        Ok(())
    }

    pub fn amplitude(&self, y: f64) -> f64 {
        let s = self.sigma;
        (std::f64::consts::PI * s * s).powf(-0.25) * (-y * y / (2.0 * s * s)).exp()
    }

    pub fn derivative(&self, y: f64) -> f64 {
        -y / (self.sigma * self.sigma) * self.amplitude(y)
    }

    /// Outcome grid spanning `+-(lambda s_max + 8 sigma)` with spacing at
    /// most `sigma / 8`.
    pub fn outcome_grid(&self, s_max: f64) -> OutcomeGrid {
        let half = self.lambda * s_max.abs() + 8.0 * self.sigma;
        let by_spacing = (2.0 * half / (self.sigma / 8.0)).ceil() as usize + 1;
        OutcomeGrid::new(-half, half, by_spacing.max(self.min_points))
    }
}

/// Uniform closed grid of outcomes; integrals use the trapezoid rule.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeGrid {
    pub points: Vec<f64>,
    pub dy: f64,
}

impl OutcomeGrid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        let dy = (hi - lo) / (n - 1) as f64;
        Self { points: (0..n).map(|k| lo + k as f64 * dy).collect(), dy }
    }

    pub fn weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.points.len() {
            0.5 * self.dy
        } else {
            self.dy
        }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().enumerate().map(|(k, &y)| self.weight(k) * f(y)).sum()
    }
}

/// System-ancilla state after premeasurement, stored as the retained
/// eigen-coefficients `c_i` of the measured operator.
#[derive(Debug, Clone)]
pub struct EntangledState {
    pub coefficients: Vec<C64>,
    pub eigenvalues: Vec<f64>,
    /// Positions of the retained eigenvectors in the operator's basis.
    pub indices: Vec<usize>,
    pub ancilla: AncillaModel,
    /// Weight of the state inside the retained set before renormalization.
    pub retained_weight: f64,
}

impl EntangledState {
    /// Joint amplitude `c_i a(y - lambda s_i)` for retained component `i`.
    pub fn amplitude(&self, i: usize, y: f64) -> C64 {
        self.coefficients[i] * self.ancilla.amplitude(y - self.ancilla.lambda * self.eigenvalues[i])
    }

    pub fn s_max(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Unnormalized collapsed coefficients for outcome `y`.
    pub fn collapse(&self, y: f64) -> Vec<C64> {
        (0..self.coefficients.len()).map(|i| self.amplitude(i, y)).collect()
    }

    pub fn mean_eigenvalue(&self) -> f64 {
        self.coefficients.iter().zip(&self.eigenvalues).map(|(c, s)| c.norm_sqr() * s).sum()
    }
}

/// Expands `psi` over the eigenbasis of `s`, keeping the largest
/// coefficients until at least `COVERAGE` of the weight is retained.
pub fn premeasure(
    psi: &WaveFunction,
    s: &SpectralOperator,
    ancilla: &AncillaModel,
) -> Result<EntangledState, MeasureError> {
    ancilla.validate()?;
    let norm = psi.norm_sqr();
    let coeffs = s.coefficients(psi.amplitudes())?;
    let values = s.eigenvalues()?;
    let total: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() / norm;
    if total < COVERAGE {
        return Err(MeasureError::BasisCoverage { retained: total });
    }
    let mut order: Vec<usize> = (0..coeffs.len()).collect();
    order.sort_by(|&a, &b| coeffs[b].norm_sqr().total_cmp(&coeffs[a].norm_sqr()));
    let mut acc = 0.0;
    let mut keep = Vec::new();
    for &i in &order {
        keep.push(i);
        acc += coeffs[i].norm_sqr() / norm;
        if acc >= COVERAGE {
            break;
        }
    }
    keep.sort_unstable();
    let scale = 1.0 / (acc * norm).sqrt();
    Ok(EntangledState {
        coefficients: keep.iter().map(|&i| coeffs[i] * scale).collect(),
        eigenvalues: keep.iter().map(|&i| values[i]).collect(),
        indices: keep,
        ancilla: *ancilla,
        retained_weight: acc,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub grid: OutcomeGrid,
    pub density: Vec<f64>,
}

impl Marginal {
    pub fn mean(&self) -> f64 {
        self.grid.points.iter().enumerate().map(|(k, y)| self.grid.weight(k) * y * self.density[k]).sum()
    }

    pub fn total(&self) -> f64 {
        (0..self.density.len()).map(|k| self.grid.weight(k) * self.density[k]).sum()
    }
}

/// `P(y) = sum_i |c_i|^2 a(y - lambda s_i)^2` on the outcome grid.
pub fn readout_marginal(ent: &EntangledState) -> Result<Marginal, MeasureError> {
    let grid = ent.ancilla.outcome_grid(ent.s_max());
    let density: Vec<f64> = grid
        .points
        .iter()
        .map(|&y| (0..ent.coefficients.len()).map(|i| ent.amplitude(i, y).norm_sqr()).sum())
        .collect();
    let m = Marginal { grid, density };
    let mass = (1.0 - m.total()).abs();
    if mass > 1e-6 {
        return Err(MeasureError::GridRange { mass });
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub y: f64,
    /// Normalized collapsed coefficients over the retained basis.
    pub collapsed: Vec<C64>,
    /// Squared norm of the unnormalized collapsed state, the density of `y`.
    pub weight: f64,
}

/// Samples an outcome from the marginal and returns the collapsed state.
pub fn readout_sample<R: Rng>(ent: &EntangledState, rng: &mut R) -> Readout {
    let i = sample_index(&ent.coefficients, rng);
    let noise: f64 = rng.sample(StandardNormal);
    let y = ent.ancilla.lambda * ent.eigenvalues[i] + ent.ancilla.sigma / std::f64::consts::SQRT_2 * noise;
    let w = ent.collapse(y);
    let weight: f64 = w.iter().map(|z| z.norm_sqr()).sum();
    let collapsed = if weight > 0.0 { w.iter().map(|z| z / weight.sqrt()).collect() } else { w };
    Readout { y, collapsed, weight }
}

fn sample_index<R: Rng>(c: &[C64], rng: &mut R) -> usize {
    let total: f64 = c.iter().map(|z| z.norm_sqr()).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, z) in c.iter().enumerate() {
        u -= z.norm_sqr();
        if u < 0.0 {
            return i;
        }
    }
    c.len() - 1
}

/// `|<a|b>|^2` for coefficient vectors.
pub fn fidelity(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>().norm_sqr()
}

/// How the second observable is read out.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SecondMeasurement {
    /// Strong limit: outcomes are the atoms `lambda g_j`.
    #[default]
    Projective,
    /// Gaussian second ancilla of width `sigma`.
    Gaussian { sigma: f64 },
}

/// Two-time protocol: weak `S` at `t1`, evolution over `duration`, then `G`.
#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub s: SpectralOperator,
    pub g: SpectralOperator,
    pub potential: PotentialModel,
    pub units: Units,
    pub propagator: PropagatorConfig,
    pub duration: f64,
    pub ancilla: AncillaModel,
    pub second: SecondMeasurement,
    pub n: usize,
    pub seed: u64,
}

impl ProtocolConfig {
    fn evolve(&self, amps: Vec<C64>, psi: &WaveFunction) -> Result<Vec<C64>, MeasureError> {
        let w = WaveFunction::new(*psi.grid(), amps, psi.time())?;
        Ok(propagate(&w, &self.potential, &self.units, &self.propagator, self.duration)?.into_amplitudes())
    }
}

/// Precomputed overlaps `C_ji = <g_j|U|s_i>` over the retained `S` basis.
#[derive(Debug, Clone)]
pub struct PreparedProtocol {
    pub ent: EntangledState,
    /// Column `i` holds the `G` coefficients of `U|s_i>`.
    pub overlaps: DMatrix<C64>,
    pub g_values: Vec<f64>,
}

pub fn prepare(psi: &WaveFunction, cfg: &ProtocolConfig) -> Result<PreparedProtocol, MeasureError> {
    if cfg.n == 0 {
        return Err(MeasureError::Config("experiment count must be at least 1".into()));
    }
    let ent = premeasure(psi, &cfg.s, &cfg.ancilla)?;
    let g_values = cfg.g.eigenvalues()?;
    let columns: Vec<Vec<C64>> = ent
        .indices
        .par_iter()
        .map(|&i| {
            let phi = cfg.s.eigenfunction(i)?;
            let evolved = cfg.evolve(phi, psi)?;
            Ok(cfg.g.coefficients(&evolved)?)
        })
        .collect::<Result<_, MeasureError>>()?;
    let overlaps = DMatrix::from_fn(g_values.len(), columns.len(), |j, i| columns[i][j]);
    Ok(PreparedProtocol { ent, overlaps, g_values })
}

impl PreparedProtocol {
    fn second_amplitudes(&self, w: &[C64]) -> Vec<C64> {
        let v = nalgebra::DVector::from_column_slice(w);
        (&self.overlaps * v).iter().copied().collect()
    }

    /// Index of the `G` eigenvalue closest to `g`.
    pub fn atom_index(&self, g: f64) -> usize {
        (0..self.g_values.len())
            .min_by(|&a, &b| (self.g_values[a] - g).abs().total_cmp(&(self.g_values[b] - g).abs()))
            .expect("non-empty G spectrum")
    }
}

/// `P(y_w, y_k)` on `yw x yk`, rows indexed by `y_w`. For a projective
/// second measurement the rows are atoms at `lambda g_j` carrying
/// probability per unit `y_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointOutcomeDistribution {
    pub yk: OutcomeGrid,
    pub yw: Vec<f64>,
    /// Quadrature weight of each `y_w` row (one for atoms).
    pub yw_weights: Vec<f64>,
    pub density: DMatrix<f64>,
    pub atoms: bool,
}

impl JointOutcomeDistribution {
    pub fn total(&self) -> f64 {
        let mut t = 0.0;
        for (r, wr) in self.yw_weights.iter().enumerate() {
            for k in 0..self.yk.points.len() {
                t += wr * self.yk.weight(k) * self.density[(r, k)];
            }
        }
        t
    }

    /// Dense matrix with the `y_k` axis as header row and `y_w` as first column.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "y_w\\y_k")?;
        for y in &self.yk.points {
            write!(out, ",{y:.16e}")?;
        }
        writeln!(out)?;
        for (r, yw) in self.yw.iter().enumerate() {
            write!(out, "{yw:.16e}")?;
            for k in 0..self.yk.points.len() {
                write!(out, ",{:.16e}", self.density[(r, k)])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Exact quadrature of the two-time joint outcome distribution.
pub fn two_time_joint(psi: &WaveFunction, cfg: &ProtocolConfig) -> Result<JointOutcomeDistribution, MeasureError> {
    joint_from_prepared(&prepare(psi, cfg)?, cfg.second)
}

pub fn joint_from_prepared(
    prep: &PreparedProtocol,
    second: SecondMeasurement,
) -> Result<JointOutcomeDistribution, MeasureError> {
    let ent = &prep.ent;
    let lambda = ent.ancilla.lambda;
    let yk = ent.ancilla.outcome_grid(ent.s_max());
    let nk = yk.points.len();
    // A[j, k] = sum_i C_ji a(y_k - lambda s_i) c_i
    let weights = DMatrix::from_fn(ent.coefficients.len(), nk, |i, k| ent.amplitude(i, yk.points[k]));
    let amp = &prep.overlaps * weights;
    let atoms = amp.map(|z| z.norm_sqr());
    let atom_y: Vec<f64> = prep.g_values.iter().map(|g| lambda * g).collect();
    let joint = match second {
        SecondMeasurement::Projective => JointOutcomeDistribution {
            yk,
            yw_weights: vec![1.0; atom_y.len()],
            yw: atom_y,
            density: atoms,
            atoms: true,
        },
        SecondMeasurement::Gaussian { sigma } => {
            let a2 = AncillaModel { sigma, lambda, min_points: MIN_OUTCOME_POINTS };
            a2.validate()?;
            let g_max = prep.g_values.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            let yw = a2.outcome_grid(g_max);
            let kernel =
                DMatrix::from_fn(yw.points.len(), atom_y.len(), |l, j| a2.amplitude(yw.points[l] - atom_y[j]).powi(2));
            let w: Vec<f64> = (0..yw.points.len()).map(|l| yw.weight(l)).collect();
            JointOutcomeDistribution { yk, yw: yw.points, yw_weights: w, density: kernel * atoms, atoms: false }
        }
    };
    let mass = (1.0 - joint.total()).abs();
    if mass > 1e-6 {
        return Err(MeasureError::GridRange { mass });
    }
    Ok(joint)
}

/// `<y(t2) y(t1)>` by quadrature over the joint distribution.
pub fn two_time_correlation(joint: &JointOutcomeDistribution) -> f64 {
    let mut c = 0.0;
    for (r, (yw, wr)) in joint.yw.iter().zip(&joint.yw_weights).enumerate() {
        let row: f64 =
            joint.yk.points.iter().enumerate().map(|(k, y)| joint.yk.weight(k) * y * joint.density[(r, k)]).sum();
        c += wr * yw * row;
    }
    c
}

/// Ancilla-free limit `lambda^2 Re<psi|U^dag G U S|psi>`.
pub fn ideal_weak_correlation(psi: &WaveFunction, cfg: &ProtocolConfig) -> Result<f64, MeasureError> {
    let norm = psi.norm_sqr();
    let s_psi = cfg.s.apply_spectral(psi.amplitudes())?;
    let u_s_psi = cfg.evolve(s_psi, psi)?;
    let u_psi = cfg.evolve(psi.amplitudes().to_vec(), psi)?;
    let g_u_s_psi = cfg.g.apply_spectral(&u_s_psi)?;
    let dx = psi.grid().dx();
    let lambda = cfg.ancilla.lambda;
    Ok(lambda * lambda * crate::qgrid::inner_product(&u_psi, &g_u_s_psi, dx).re / norm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftedOverlap {
    pub s_i: f64,
    pub s_j: f64,
    pub numeric: f64,
    /// First-order Taylor value `lambda (s_i + s_j) / 2`.
    pub taylor: f64,
    /// Exact Gaussian value `lambda (s_i + s_j)/2 exp(-lambda^2 (s_i - s_j)^2 / 4 sigma^2)`.
    pub exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub norm: f64,
    /// `int y a a' dy`, target -1/2.
    pub y_a_da: f64,
    /// `int y a'^2 dy`, target 0.
    pub y_da_da: f64,
    /// `int y a^2 dy`, target 0.
    pub y_a_a: f64,
    pub overlaps: Vec<ShiftedOverlap>,
    pub max_deviation: f64,
}

/// Integration-by-parts identities of the ancilla and shifted overlaps for
/// the eigenvalue pairs in `pairs`, all on the outcome grid.
pub fn ancilla_moment_checks(ancilla: &AncillaModel, pairs: &[(f64, f64)]) -> Result<MomentReport, MeasureError> {
    ancilla.validate()?;
    let s_max = pairs.iter().fold(0.0f64, |m, (a, b)| m.max(a.abs()).max(b.abs()));
    let grid = ancilla.outcome_grid(s_max);
    let a = |y| ancilla.amplitude(y);
    let da = |y| ancilla.derivative(y);
    let norm = grid.integrate(|y| a(y) * a(y));
    let y_a_da = grid.integrate(|y| y * a(y) * da(y));
    let y_da_da = grid.integrate(|y| y * da(y) * da(y));
    let y_a_a = grid.integrate(|y| y * a(y) * a(y));
    let l = ancilla.lambda;
    let sig2 = ancilla.sigma * ancilla.sigma;
    let overlaps: Vec<ShiftedOverlap> = pairs
        .iter()
        .map(|&(si, sj)| {
            let (u, v) = (l * si, l * sj);
            ShiftedOverlap {
                s_i: si,
                s_j: sj,
                numeric: grid.integrate(|y| y * a(y - u) * a(y - v)),
                taylor: 0.5 * (u + v),
                exact: 0.5 * (u + v) * (-(u - v) * (u - v) / (4.0 * sig2)).exp(),
            }
        })
        .collect();
    let max_deviation = [(norm - 1.0).abs(), (y_a_da + 0.5).abs(), y_da_da.abs(), y_a_a.abs()]
        .into_iter()
        .chain(overlaps.iter().map(|o| (o.numeric - o.exact).abs()))
        .fold(0.0, f64::max);
    if max_deviation > MOMENT_TOLERANCE {
        return Err(MeasureError::AncillaGrid { deviation: max_deviation });
    }
    Ok(MomentReport { norm, y_a_da, y_da_da, y_a_a, overlaps, max_deviation })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationTerms {
    /// Common factor `a(y_w) a(y_k)`, which underflows far in the tails.
    pub envelope: f64,
    /// Term norms divided by `envelope`: `|U psi|`,
    /// `lambda |y_k| / sigma^2 |U S psi|`, `lambda |y_w| / sigma^2 |G U psi|`
    /// and `lambda^2 |y_w y_k| / sigma^4 |G U S psi|`.
    pub relative: [f64; 4],
    /// Outcome `y = y_k = y_w` at which terms one and four are equal.
    pub crossover_y: f64,
    /// The scale `sigma^2 / lambda`.
    pub reference_y: f64,
}

impl PerturbationTerms {
    /// Norms of `a(y_w) a(y_k) U psi`, `-lambda a'(y_k) a(y_w) U S psi`,
    /// `-lambda a'(y_w) a(y_k) G U psi` and `lambda^2 a'(y_w) a'(y_k) G U S psi`.
    pub fn norms(&self) -> [f64; 4] {
        self.relative.map(|r| r * self.envelope)
    }

    /// Ratio of term one to term four.
    pub fn ratio_14(&self) -> f64 {
        self.relative[0] / self.relative[3]
    }
}

/// First-order Taylor terms (in each coupling) of the state after a weak
/// `S` readout `y_k` and a weak `G` readout `y_w`. Uses `a'(y) = -y a(y) / sigma^2`.
pub fn perturbation_decomposition(
    psi: &WaveFunction,
    cfg: &ProtocolConfig,
    y_k: f64,
    y_w: f64,
) -> Result<PerturbationTerms, MeasureError> {
    let anc = &cfg.ancilla;
    let dx = psi.grid().dx();
    let norm = |v: &[C64]| (v.iter().map(|z| z.norm_sqr()).sum::<f64>() * dx).sqrt();
    let u_psi = cfg.evolve(psi.amplitudes().to_vec(), psi)?;
    let u_s_psi = cfg.evolve(cfg.s.apply_spectral(psi.amplitudes())?, psi)?;
    let g_u_psi = cfg.g.apply_spectral(&u_psi)?;
    let g_u_s_psi = cfg.g.apply_spectral(&u_s_psi)?;
    let l = anc.lambda;
    let sig2 = anc.sigma * anc.sigma;
    let (dk, dw) = (y_k.abs() / sig2, y_w.abs() / sig2);
    let relative = [norm(&u_psi), l * dk * norm(&u_s_psi), l * dw * norm(&g_u_psi), l * l * dk * dw * norm(&g_u_s_psi)];
    let r = norm(&g_u_s_psi) / norm(&u_psi);
    Ok(PerturbationTerms {
        envelope: anc.amplitude(y_w) * anc.amplitude(y_k),
        relative,
        crossover_y: sig2 / (l * r.sqrt()),
        reference_y: sig2 / l,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentLog {
    pub i: usize,
    pub y_k: f64,
    pub y_g: f64,
    pub post_selected: bool,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperationalEstimate {
    pub mode: EstimatorMode,
    pub value: f64,
    /// Standard error (zero in exact mode).
    pub stderr: f64,
    /// Probability of the post-selected outcome.
    pub probability: f64,
    pub post_selected: usize,
    pub n: usize,
    #[serde(skip)]
    pub log: Vec<ExperimentLog>,
}

/// Estimator `(1/lambda) E[y_k | y_g = lambda g_a]` with the second
/// measurement projective. Monte Carlo experiment `i` draws from its own
/// stream of `cfg.seed`, so results do not depend on thread count.
pub fn operational_weak_value(
    psi: &WaveFunction,
    cfg: &ProtocolConfig,
    g_a: f64,
    mode: EstimatorMode,
    keep_log: bool,
) -> Result<OperationalEstimate, MeasureError> {
    let prep = prepare(psi, cfg)?;
    estimate_from_prepared(&prep, cfg, g_a, mode, keep_log)
}

pub fn estimate_from_prepared(
    prep: &PreparedProtocol,
    cfg: &ProtocolConfig,
    g_a: f64,
    mode: EstimatorMode,
    keep_log: bool,
) -> Result<OperationalEstimate, MeasureError> {
    let a = prep.atom_index(g_a);
    let lambda = prep.ent.ancilla.lambda;
    if !(lambda > 0.0) {
        return Err(MeasureError::Config("operational estimator needs lambda > 0".into()));
    }
    match mode {
        EstimatorMode::Exact => {
            let joint = joint_from_prepared(prep, SecondMeasurement::Projective)?;
            let yk = &joint.yk;
            let mut num = 0.0;
            let mut den = 0.0;
            for (k, y) in yk.points.iter().enumerate() {
                let p = joint.density[(a, k)] * yk.weight(k);
                num += y * p;
                den += p;
            }
            Ok(OperationalEstimate {
                mode,
                value: num / den / lambda,
                stderr: 0.0,
                probability: den,
                post_selected: 0,
                n: 0,
                log: Vec::new(),
            })
        }
        EstimatorMode::MonteCarlo => monte_carlo(prep, cfg, a, keep_log),
    }
}

fn monte_carlo(
    prep: &PreparedProtocol,
    cfg: &ProtocolConfig,
    a: usize,
    keep_log: bool,
) -> Result<OperationalEstimate, MeasureError> {
    let ent = &prep.ent;
    let lambda = ent.ancilla.lambda;
    let row: Vec<C64> = (0..ent.coefficients.len()).map(|i| prep.overlaps[(a, i)]).collect();
    let logs: Vec<ExperimentLog> = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::seed::stream(cfg.seed, crate::seed::EXPERIMENTS, i as u64);
            let r = readout_sample(ent, &mut rng);
            // probability of atom a given the collapsed state
            let amp: C64 = row.iter().zip(&r.collapsed).map(|(c, w)| c * w).sum();
            let p_a = amp.norm_sqr();
            let u: f64 = rng.random();
            let post_selected = u < p_a;
            let y_g = if post_selected {
                lambda * prep.g_values[a]
            } else if keep_log {
                // draw among the remaining atoms
                let probs: Vec<f64> = prep.second_amplitudes(&r.collapsed).iter().map(|z| z.norm_sqr()).collect();
                let rest: f64 = probs.iter().sum::<f64>() - probs[a];
                let mut v = (u - p_a) / (1.0 - p_a).max(f64::MIN_POSITIVE) * rest;
                let mut j = probs.len() - 1;
                for (jj, p) in probs.iter().enumerate() {
                    if jj == a {
                        continue;
                    }
                    v -= p;
                    if v < 0.0 {
                        j = jj;
                        break;
                    }
                }
                lambda * prep.g_values[j]
            } else {
                f64::NAN
            };
            ExperimentLog { i, y_k: r.y, y_g, post_selected, weight: r.weight }
        })
        .collect();
    let selected: Vec<f64> = logs.iter().filter(|l| l.post_selected).map(|l| l.y_k / lambda).collect();
    let probability = selected.len() as f64 / cfg.n as f64;
    if selected.len() < 10 {
        return Err(MeasureError::InsufficientStatistics { probability, n: cfg.n });
    }
    let (value, stderr) = crate::weakval::mean_stderr(&selected).expect("non-empty");
    Ok(OperationalEstimate {
        mode: EstimatorMode::MonteCarlo,
        value,
        stderr,
        probability,
        post_selected: selected.len(),
        n: cfg.n,
        log: if keep_log { logs } else { Vec::new() },
    })
}

/// Experiment log as JSON lines ordered by experiment id.
pub fn write_experiment_log<W: Write>(log: &[ExperimentLog], mut out: W) -> std::io::Result<()> {
    for l in log {
        serde_json::to_writer(&mut out, l)?;
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qgrid::{build_hamiltonian, expectation, Grid1D, Kinetic, Method};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn units() -> Units {
        Units::default()
    }

    struct Ho {
        grid: Grid1D,
        pot: PotentialModel,
        h: SpectralOperator,
    }

    fn ho() -> Ho {
        let grid = Grid1D::centered(10.0, 128).unwrap();
        let pot = PotentialModel::Harmonic { omega: 1.0, center: 1.0 };
        let h = build_hamiltonian(&grid, &pot, 0.0, &units(), Kinetic::Spectral).unwrap().truncated(6);
        Ho { grid, pot, h }
    }

    fn superposition(ho: &Ho, c: &[C64]) -> WaveFunction {
        let mut amps = vec![C64::new(0.0, 0.0); ho.grid.len()];
        for (i, ci) in c.iter().enumerate() {
            for (a, e) in amps.iter_mut().zip(ho.h.eigenfunction(i).unwrap()) {
                *a += ci * e;
            }
        }
        let mut w = WaveFunction::new(ho.grid, amps, 0.0).unwrap();
        w.normalize().unwrap();
        w
    }

    fn protocol(ho: &Ho, sigma: f64, lambda: f64) -> ProtocolConfig {
        ProtocolConfig {
            s: ho.h.clone(),
            g: SpectralOperator::position(ho.grid),
            potential: ho.pot.clone(),
            units: units(),
            propagator: PropagatorConfig::new(0.005, Method::SplitOperator, 10),
            duration: 0.7,
            ancilla: AncillaModel::new(sigma, lambda).unwrap(),
            second: SecondMeasurement::Projective,
            n: 1,
            seed: 0,
        }
    }

    #[test]
    fn ancilla_normalized_and_centred() {
        let a = AncillaModel::new(0.7, 2.0).unwrap();
        let g = a.outcome_grid(3.0);
        assert!((g.integrate(|y| a.amplitude(y).powi(2)) - 1.0).abs() < 1e-8);
        let centre = g.integrate(|y| y * a.amplitude(y - 2.0 * 1.5).powi(2));
        assert!((centre - 3.0).abs() < 1e-8);
    }

    #[test]
    fn premeasure_eigenstate_and_zero_coupling() {
        let ho = ho();
        let psi = WaveFunction::new(ho.grid, ho.h.eigenfunction(2).unwrap(), 0.0).unwrap();
        let ent = premeasure(&psi, &ho.h, &AncillaModel::new(0.5, 1.0).unwrap()).unwrap();
        assert_eq!(ent.indices, vec![2]);
        let m = readout_marginal(&ent).unwrap();
        let a = ent.ancilla;
        for (k, y) in m.grid.points.iter().enumerate().step_by(97) {
            assert!((m.density[k] - a.amplitude(y - ent.eigenvalues[0]).powi(2)).abs() < 1e-10);
        }
        let psi = superposition(&ho, &[C64::new(1.0, 0.0), C64::new(0.0, 1.0)]);
        let ent = premeasure(&psi, &ho.h, &AncillaModel::new(0.5, 0.0).unwrap()).unwrap();
        for i in 0..2 {
            assert_eq!(ent.amplitude(i, 0.3), ent.coefficients[i] * ent.ancilla.amplitude(0.3));
        }
    }

    #[test]
    fn coverage_error_on_truncated_basis() {
        let ho = ho();
        let psi = WaveFunction::gaussian(ho.grid, 3.0, 0.4, 2.0).unwrap();
        let err = premeasure(&psi, &ho.h, &AncillaModel::new(1.0, 1.0).unwrap());
        assert!(matches!(err, Err(MeasureError::BasisCoverage { .. })));
    }

    #[test]
    fn strong_readout_is_bimodal() {
        let ho = ho();
        let psi = superposition(&ho, &[C64::new(1.0, 0.0), C64::new(1.0, 0.0)]);
        let ent = premeasure(&psi, &ho.h, &AncillaModel::new(0.05, 1.0).unwrap()).unwrap();
        let m = readout_marginal(&ent).unwrap();
        let near = |y0: f64| {
            let k = m.grid.points.iter().position(|&y| y >= y0).unwrap();
            m.density[k]
        };
        assert!(near(ent.eigenvalues[0]) > 10.0 * near(0.5 * (ent.eigenvalues[0] + ent.eigenvalues[1])));
        assert!(near(ent.eigenvalues[1]) > 10.0 * near(0.5 * (ent.eigenvalues[0] + ent.eigenvalues[1])));
        assert!((m.mean() - 0.5 * (ent.eigenvalues[0] + ent.eigenvalues[1])).abs() < 1e-6);
    }

    #[test]
    fn marginal_mean_is_apparatus_independent() {
        let ho = ho();
        let psi = superposition(&ho, &[C64::new(0.6, 0.0), C64::new(0.0, 0.5), C64::new(-0.3, 0.4)]);
        let target =
            expectation(&build_hamiltonian(&ho.grid, &ho.pot, 0.0, &units(), Kinetic::Spectral).unwrap(), &psi)
                .unwrap();
        let lambda = 0.8;
        for ratio in [0.1, 1.0, 10.0] {
            let ent = premeasure(&psi, &ho.h, &AncillaModel::new(ratio * lambda * 2.0, lambda).unwrap()).unwrap();
            let m = readout_marginal(&ent).unwrap();
            assert!((m.mean() - lambda * target).abs() < 1e-6, "ratio {ratio}");
        }
    }

    #[test]
    fn readout_collapse_limits() {
        let ho = ho();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // eigenstate: no back-action
        let psi = WaveFunction::new(ho.grid, ho.h.eigenfunction(1).unwrap(), 0.0).unwrap();
        let ent = premeasure(&psi, &ho.h, &AncillaModel::new(0.3, 1.0).unwrap()).unwrap();
        for _ in 0..20 {
            let r = readout_sample(&ent, &mut rng);
            assert!((fidelity(&r.collapsed, &ent.coefficients) - 1.0).abs() < 1e-12);
        }
        // strong: collapse onto the nearest eigenvalue
        let psi = superposition(&ho, &[C64::new(1.0, 0.0), C64::new(1.0, 0.0)]);
        let ent = premeasure(&psi, &ho.h, &AncillaModel::new(1e-3, 1.0).unwrap()).unwrap();
        for _ in 0..20 {
            let r = readout_sample(&ent, &mut rng);
            let nearest = (0..2)
                .min_by(|&a, &b| (ent.eigenvalues[a] - r.y).abs().total_cmp(&(ent.eigenvalues[b] - r.y).abs()))
                .unwrap();
            assert!(r.collapsed[nearest].norm_sqr() > 0.999);
        }
        // weak: the state is barely disturbed for central outcomes
        let ent = premeasure(&psi, &ho.h, &AncillaModel::new(10.0, 1.0).unwrap()).unwrap();
        let y = ent.mean_eigenvalue();
        let w = ent.collapse(y);
        let wn: f64 = w.iter().map(|z| z.norm_sqr()).sum();
        let w: Vec<C64> = w.iter().map(|z| z / wn.sqrt()).collect();
        assert!(fidelity(&w, &ent.coefficients) > 0.99);
    }

    #[test]
    fn eigenstate_correlation_factorizes() {
        let ho = ho();
        let psi = WaveFunction::new(ho.grid, ho.h.eigenfunction(1).unwrap(), 0.0).unwrap();
        let x = SpectralOperator::position(ho.grid);
        let g_mean = expectation(&x, &psi).unwrap();
        let s1 = ho.h.eigenvalues().unwrap()[1];
        for sigma in [0.1, 1.0, 10.0] {
            let cfg = protocol(&ho, sigma, 0.5);
            let joint = two_time_joint(&psi, &cfg).unwrap();
            assert!((joint.total() - 1.0).abs() < 1e-6);
            assert!(joint.density.iter().all(|&p| p >= 0.0));
            let c = two_time_correlation(&joint);
            assert!((c - 0.25 * s1 * g_mean).abs() < 1e-6, "sigma {sigma}: {c}");
        }
    }

    #[test]
    fn strong_limit_is_tpm() {
        let ho = ho();
        let psi = superposition(&ho, &[C64::new(0.8, 0.0), C64::new(0.0, 0.6)]);
        let cfg = protocol(&ho, 1e-3, 1.0);
        let c = two_time_correlation(&two_time_joint(&psi, &cfg).unwrap());
        // brute force: sum_ij s_i g_j |<g_j|U|s_i>|^2 |c_i|^2
        let ent = premeasure(&psi, &cfg.s, &cfg.ancilla).unwrap();
        let dx = ho.grid.dx();
        let mut tpm = 0.0;
        for (i, &idx) in ent.indices.iter().enumerate() {
            let phi = WaveFunction::new(ho.grid, ho.h.eigenfunction(idx).unwrap(), 0.0).unwrap();
            let u = propagate(&phi, &cfg.potential, &units(), &cfg.propagator, cfg.duration).unwrap();
            for (j, z) in u.amplitudes().iter().enumerate() {
                tpm += ent.eigenvalues[i] * ho.grid.x(j) * z.norm_sqr() * dx * ent.coefficients[i].norm_sqr();
            }
        }
        assert!((c - tpm).abs() < 1e-8, "{c} vs {tpm}");
    }

    #[test]
    fn gaussian_second_ancilla_keeps_correlation() {
        let g = Grid1D::centered(8.0, 64).unwrap();
        let pot = PotentialModel::Harmonic { omega: 1.0, center: 1.0 };
        let h = build_hamiltonian(&g, &pot, 0.0, &units(), Kinetic::Spectral).unwrap().truncated(3);
        let ho = Ho { grid: g, pot, h };
        let psi = superposition(&ho, &[C64::new(0.8, 0.0), C64::new(0.0, 0.6)]);
        let mut cfg = protocol(&ho, 2.0, 0.5);
        let c1 = two_time_correlation(&two_time_joint(&psi, &cfg).unwrap());
        cfg.second = SecondMeasurement::Gaussian { sigma: 1.5 };
        let joint = two_time_joint(&psi, &cfg).unwrap();
        assert!((joint.total() - 1.0).abs() < 1e-6);
        assert!((two_time_correlation(&joint) - c1).abs() < 1e-8);
    }

    #[test]
    fn commuting_ideal_weak_is_product() {
        let ho = ho();
        let psi = superposition(&ho, &[C64::new(0.8, 0.0), C64::new(0.0, 0.6)]);
        let mut cfg = protocol(&ho, 1.0, 0.7);
        cfg.g = ho.h.clone();
        cfg.duration = 0.0;
        let ideal = ideal_weak_correlation(&psi, &cfg).unwrap();
        let h2 = ho.h.apply_spectral(&ho.h.apply_spectral(psi.amplitudes()).unwrap()).unwrap();
        let oracle = 0.49 * crate::qgrid::inner_product(psi.amplitudes(), &h2, ho.grid.dx()).re;
        assert!((ideal - oracle).abs() < 1e-10);
    }

    #[test]
    fn moment_identities() {
        let r = ancilla_moment_checks(&AncillaModel::new(1.0, 0.1).unwrap(), &[(0.5, 1.5), (1.5, 2.5)]).unwrap();
        assert!((r.y_a_da + 0.5).abs() < 1e-8);
        assert!(r.y_da_da.abs() < 1e-8 && r.y_a_a.abs() < 1e-10);
        for o in &r.overlaps {
            assert!((o.numeric - o.exact).abs() < 1e-10);
            // Taylor error is second order in lambda s / sigma
            let bound = o.taylor.abs() * (0.1 * (o.s_i - o.s_j)).powi(2);
            assert!((o.numeric - o.taylor).abs() <= bound);
        }
    }

    #[test]
    fn perturbation_terms() {
        let ho = ho();
        let psi = superposition(&ho, &[C64::new(0.8, 0.0), C64::new(0.0, 0.6)]);
        let cfg = protocol(&ho, 10.0, 0.1);
        let t = perturbation_decomposition(&psi, &cfg, 0.0, 0.0).unwrap();
        let n = t.norms();
        assert!(n[0] > 0.0 && n[1] == 0.0 && n[2] == 0.0 && n[3] == 0.0);
        let y = t.reference_y;
        let t = perturbation_decomposition(&psi, &cfg, y, y).unwrap();
        assert!(t.ratio_14() > 0.25 && t.ratio_14() < 4.0, "{}", t.ratio_14());
        let tc = perturbation_decomposition(&psi, &cfg, t.crossover_y, t.crossover_y).unwrap();
        assert!((tc.ratio_14() - 1.0).abs() < 1e-10);
        let mut zero = protocol(&ho, 10.0, 0.0);
        zero.ancilla.lambda = 0.0;
        let t0 = perturbation_decomposition(&psi, &zero, 3.0, -2.0).unwrap();
        let n = t0.norms();
        assert!(n[0] > 0.0 && n[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn operational_estimator_on_eigenstate() {
        let ho = ho();
        let psi = WaveFunction::new(ho.grid, ho.h.eigenfunction(1).unwrap(), 0.0).unwrap();
        let mut cfg = protocol(&ho, 1.0, 1.0);
        let s1 = ho.h.eigenvalues().unwrap()[1];
        for g_a in [0.5, 1.0, 2.0] {
            let e = operational_weak_value(&psi, &cfg, g_a, EstimatorMode::Exact, false).unwrap();
            assert!((e.value - s1).abs() < 1e-8);
        }
        cfg.n = 2000;
        cfg.seed = 5;
        // x = 1 is the node of this eigenstate; post-select away from it
        let e = operational_weak_value(&psi, &cfg, 1.8, EstimatorMode::MonteCarlo, true).unwrap();
        assert_eq!(e.log.len(), 2000);
        assert!((e.value - s1).abs() < 4.0 * e.stderr.max(1e-12));
        assert!(e.log.iter().all(|l| l.y_g.is_finite()));
        let again = operational_weak_value(&psi, &cfg, 1.8, EstimatorMode::MonteCarlo, true).unwrap();
        assert_eq!(e.log, again.log);
        let mut buf = Vec::new();
        write_experiment_log(&e.log[..2], &mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert!(line.lines().next().unwrap().starts_with("{\"i\":0,\"y_k\":"));
    }

    #[test]
    fn insufficient_statistics() {
        let ho = ho();
        let psi = WaveFunction::new(ho.grid, ho.h.eigenfunction(0).unwrap(), 0.0).unwrap();
        let mut cfg = protocol(&ho, 1.0, 1.0);
        cfg.n = 50;
        let err = operational_weak_value(&psi, &cfg, 9.5, EstimatorMode::MonteCarlo, false);
        assert!(matches!(err, Err(MeasureError::InsufficientStatistics { .. })));
    }
}

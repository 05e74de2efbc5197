//! Intrinsic (unperturbed) properties along Bohmian trajectories: work and
//! its distribution, the power balance, Ramo-Shockley currents and their
//! spectral density, and dwell times.

use std::io::Write;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bohm::{PointProbe, Trajectory, TrajectoryEnsemble};
use crate::qgrid::{build_hamiltonian, fft, window_weights, Evolution, Kinetic, SpectralOperator, WaveFunction};
use crate::weakval::{mean_stderr, WeakValueError, WeakValueField, HORIZON_MASS_LIMIT, RICHARDSON_LIMIT};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntrinsicsError {
    #[error("no usable records ({flagged} flagged)")]
    EmptyDistribution { flagged: usize },
    #[error("lag horizon of {lags} samples needs a record longer than {samples} samples")]
    Lag { lags: usize, samples: usize },
    #[error("{count} trajectories still inside the region at the horizon")]
    Horizon { count: usize },
    #[error("horizon too short: probability {mass:e} still inside the region at T")]
    DensityHorizon { mass: f64 },
    #[error("time {t} is not an interior stored frame")]
    Time { t: f64 },
    #[error("node at x = {x}, t = {t}")]
    Node { x: f64, t: f64 },
    #[error("time quadrature not converged: relative change {rel:e}")]
    Quadrature { rel: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    WeakValue(#[from] WeakValueError),
}

fn frame_of(evolution: &Evolution, t: f64) -> Result<usize, IntrinsicsError> {
    evolution.frame_index(t).ok_or(IntrinsicsError::Time { t })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorkRecord {
    pub experiment_id: usize,
    pub e_initial: f64,
    pub e_final: f64,
    pub work: f64,
    /// Endpoint at a node; energies are NaN and the record is excluded.
    pub flagged: bool,
}

fn local_energy_field(evolution: &Evolution, k: usize) -> Result<WeakValueField, IntrinsicsError> {
    let psi = evolution.frame(k);
    let h = build_hamiltonian(psi.grid(), evolution.potential(), psi.time(), evolution.units(), Kinetic::Spectral)
        .map_err(WeakValueError::from)?;
    Ok(WeakValueField::new(&h, psi)?)
}

fn energies(field: &WeakValueField, xs: &[f64]) -> Result<Vec<Option<f64>>, IntrinsicsError> {
    field
        .at_many(xs)
        .into_iter()
        .map(|r| match r {
            Ok(z) => Ok(Some(z.re)),
            Err(WeakValueError::PostSelectionImpossible { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        })
        .collect()
}

fn record(id: usize, e1: Option<f64>, e2: Option<f64>) -> WorkRecord {
    match (e1, e2) {
        (Some(a), Some(b)) => WorkRecord { experiment_id: id, e_initial: a, e_final: b, work: b - a, flagged: false },
        _ => WorkRecord { experiment_id: id, e_initial: f64::NAN, e_final: f64::NAN, work: f64::NAN, flagged: true },
    }
}

/// Work `E(x(t2), t2) - E(x(t1), t1)` with `E` the local energy.
pub fn work_per_experiment(
    evolution: &Evolution,
    trajectory: &Trajectory,
    t1: f64,
    t2: f64,
) -> Result<WorkRecord, IntrinsicsError> {
    Ok(work_ensemble(evolution, std::slice::from_ref(trajectory), t1, t2)?.remove(0))
}

/// Work records for every trajectory, ordered as given.
pub fn work_ensemble(
    evolution: &Evolution,
    trajectories: &[Trajectory],
    t1: f64,
    t2: f64,
) -> Result<Vec<WorkRecord>, IntrinsicsError> {
    let (k1, k2) = (frame_of(evolution, t1)?, frame_of(evolution, t2)?);
    let x1: Vec<f64> = trajectories.iter().map(|t| t.positions[k1]).collect();
    let x2: Vec<f64> = trajectories.iter().map(|t| t.positions[k2]).collect();
    let e1 = energies(&local_energy_field(evolution, k1)?, &x1)?;
    let e2 = energies(&local_energy_field(evolution, k2)?, &x2)?;
    Ok(trajectories.iter().zip(e1.into_iter().zip(e2)).map(|(t, (a, b))| record(t.experiment_id, a, b)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkDistribution {
    pub bin_edges: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub n: usize,
    pub flagged: usize,
    /// Unbinned moments of the work values.
    pub mean: f64,
    pub stderr: f64,
}

impl WorkDistribution {
    /// Mean of the binned distribution at the bin centres.
    pub fn binned_mean(&self) -> f64 {
        self.bin_edges.windows(2).zip(&self.probabilities).map(|(e, p)| 0.5 * (e[0] + e[1]) * p).sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "w_low,w_high,probability")?;
        for (e, p) in self.bin_edges.windows(2).zip(&self.probabilities) {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", e[0], e[1], p)?;
        }
        Ok(())
    }
}

const MAX_BINS: usize = 10_000;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Normalized histogram with Freedman-Diaconis bins; flagged records are
/// excluded and counted.
pub fn work_distribution(records: &[WorkRecord]) -> Result<WorkDistribution, IntrinsicsError> {
    let flagged = records.iter().filter(|r| r.flagged).count();
    let mut w: Vec<f64> = records.iter().filter(|r| !r.flagged).map(|r| r.work).collect();
    let (mean, stderr) = mean_stderr(&w).ok_or(IntrinsicsError::EmptyDistribution { flagged })?;
    w.sort_by(f64::total_cmp);
    let (lo, hi) = (w[0], w[w.len() - 1]);
    let n = w.len();
    if hi == lo {
        return Ok(WorkDistribution {
            bin_edges: vec![lo - 0.5, lo + 0.5],
            probabilities: vec![1.0],
            n,
            flagged,
            mean,
            stderr,
        });
    }
    let iqr = quantile(&w, 0.75) - quantile(&w, 0.25);
    let mut width = 2.0 * iqr / (n as f64).cbrt();
    if !(width > 0.0) {
        // degenerate quartiles: square-root rule
        width = (hi - lo) / (n as f64).sqrt().ceil();
    }
    let bins = (((hi - lo) / width).ceil() as usize).clamp(1, MAX_BINS);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in &w {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    Ok(WorkDistribution {
        bin_edges: (0..=bins).map(|b| lo + b as f64 * width).collect(),
        probabilities: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        n,
        flagged,
        mean,
        stderr,
    })
}

pub fn write_work_csv<W: Write>(records: &[WorkRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "experiment_id,e_initial,e_final,work,flagged")?;
    for r in records {
        writeln!(out, "{},{:.16e},{:.16e},{:.16e},{}", r.experiment_id, r.e_initial, r.e_final, r.work, r.flagged)?;
    }
    Ok(())
}

/// Kinetic plus quantum energy `m v^2 / 2 + Q` at a point.
fn bohm_energy(probe: &PointProbe, x: f64, mass: f64) -> Result<f64, IntrinsicsError> {
    let t = probe.time();
    let v = probe.velocity(x).map_err(|_| IntrinsicsError::Node { x, t })?;
    let q = probe.quantum_potential(x).map_err(|_| IntrinsicsError::Node { x, t })?;
    Ok(0.5 * mass * v * v + q)
}

/// Residual of the power balance `dE/dt - v F - dQ/dt` along a trajectory
/// at an interior frame, all derivatives by centred differences over one
/// output step. `F = -dV/dx`, which is `qE` for a uniform drive.
pub fn power_balance_residual(evolution: &Evolution, trajectory: &Trajectory, t: f64) -> Result<f64, IntrinsicsError> {
    let k = frame_of(evolution, t)?;
    if k == 0 || k + 1 >= evolution.len() {
        return Err(IntrinsicsError::Time { t });
    }
    let units = evolution.units();
    let h = evolution.dt_out();
    let probes: Vec<PointProbe> = (k - 1..=k + 1).map(|j| PointProbe::new(evolution.frame(j), units)).collect();
    let xs = [trajectory.positions[k - 1], trajectory.positions[k], trajectory.positions[k + 1]];
    let de = (bohm_energy(&probes[2], xs[2], units.mass)? - bohm_energy(&probes[0], xs[0], units.mass)?) / (2.0 * h);
    let x = xs[1];
    let node = |_| IntrinsicsError::Node { x, t };
    let v = probes[1].velocity(x).map_err(node)?;
    let dq =
        (probes[2].quantum_potential(x).map_err(node)? - probes[0].quantum_potential(x).map_err(node)?) / (2.0 * h);
    let force = evolution.potential().force(x, t, units);
    Ok(de - v * force - dq)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrentConfig {
    /// Device length.
    pub length: f64,
    #[serde(default = "unit_charge")]
    pub charge: f64,
}

fn unit_charge() -> f64 {
    1.0
}

impl CurrentConfig {
    pub fn new(length: f64, charge: f64) -> Result<Self, IntrinsicsError> {
        let c = Self { length, charge };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), IntrinsicsError> {
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(IntrinsicsError::Config("device length must be positive".into()));
        }
        Ok(())
    }
}

fn momentum_field(psi: &WaveFunction, evolution: &Evolution) -> Result<WeakValueField, IntrinsicsError> {
    Ok(WeakValueField::new(&SpectralOperator::momentum(*psi.grid(), *evolution.units()), psi)?)
}

/// Ramo-Shockley current `(q/L) v` with `v` the real momentum weak value
/// over `m` at the trajectory point.
pub fn current_per_experiment(
    evolution: &Evolution,
    trajectory: &Trajectory,
    cfg: &CurrentConfig,
    t: f64,
) -> Result<f64, IntrinsicsError> {
    let k = frame_of(evolution, t)?;
    let psi = evolution.frame(k);
    let x = trajectory.positions[k];
    match momentum_field(psi, evolution)?.at_many(&[x]).remove(0) {
        Ok(p) => Ok(cfg.charge / cfg.length * p.re / evolution.units().mass),
        Err(WeakValueError::PostSelectionImpossible { .. }) => Err(IntrinsicsError::Node { x, t }),
        Err(e) => Err(e.into()),
    }
}

/// Current traces `I^i(t_k)` for every trajectory and stored frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentTraces {
    pub times: Vec<f64>,
    /// One row per experiment; NaN marks flagged samples.
    pub currents: Vec<Vec<f64>>,
    pub flagged: usize,
}

impl CurrentTraces {
    /// Rows without any flagged sample.
    pub fn clean(&self) -> Vec<Vec<f64>> {
        self.currents.iter().filter(|r| r.iter().all(|v| v.is_finite())).cloned().collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "t")?;
        for i in 0..self.currents.len() {
            write!(out, ",i_{}", i + 1)?;
        }
        writeln!(out)?;
        for (k, t) in self.times.iter().enumerate() {
            write!(out, "{t:.16e}")?;
            for row in &self.currents {
                write!(out, ",{:.16e}", row[k])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub fn current_traces(
    evolution: &Evolution,
    ensemble: &TrajectoryEnsemble,
    cfg: &CurrentConfig,
) -> Result<CurrentTraces, IntrinsicsError> {
    cfg.validate()?;
    let scale = cfg.charge / cfg.length / evolution.units().mass;
    let columns: Vec<Vec<f64>> = (0..evolution.len())
        .into_par_iter()
        .map(|k| {
            let field = momentum_field(evolution.frame(k), evolution)?;
            field
                .at_many(&ensemble.positions_at_frame(k))
                .into_iter()
                .map(|r| match r {
                    Ok(p) => Ok(scale * p.re),
                    Err(WeakValueError::PostSelectionImpossible { .. }) => Ok(f64::NAN),
                    Err(e) => Err(e.into()),
                })
                .collect()
        })
        .collect::<Result<_, IntrinsicsError>>()?;
    let currents: Vec<Vec<f64>> = (0..ensemble.len()).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    let flagged = currents.iter().filter(|r| r.iter().any(|v| !v.is_finite())).count();
    Ok(CurrentTraces { times: evolution.times(), currents, flagged })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagWindow {
    #[default]
    None,
    Hann,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsdResult {
    /// Angular frequencies in ascending order, symmetric about zero.
    pub omega: Vec<f64>,
    pub values: Vec<f64>,
    pub tau_max: f64,
    /// Biased autocorrelation at lags `0..=M` (before any lag window).
    pub correlation: Vec<f64>,
    pub dt: f64,
}

impl PsdResult {
    /// Trapezoid integral of the correlation over `[-tau_max, tau_max]`.
    pub fn correlation_integral(&self) -> f64 {
        let m = self.correlation.len() - 1;
        let inner: f64 = self.correlation[1..m].iter().sum();
        self.dt * (self.correlation[0] + 2.0 * inner + self.correlation[m])
    }

    pub fn value_at_zero(&self) -> f64 {
        self.values[self.omega.len() / 2]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "omega,psd")?;
        for (w, v) in self.omega.iter().zip(&self.values) {
            writeln!(out, "{w:.16e},{v:.16e}")?;
        }
        Ok(())
    }
}

/// Power spectral density from the ensemble-and-time averaged biased
/// autocorrelation over lags `|tau| <= horizon`, transformed with
/// trapezoid weights so that `PSD(0)` is the trapezoid integral of `C`.
pub fn psd(traces: &[Vec<f64>], dt: f64, horizon: f64, window: LagWindow) -> Result<PsdResult, IntrinsicsError> {
    if traces.is_empty() {
        return Err(IntrinsicsError::EmptyDistribution { flagged: 0 });
    }
    if !(dt > 0.0) {
        return Err(IntrinsicsError::Config("sampling step must be positive".into()));
    }
    let samples = traces.iter().map(Vec::len).min().unwrap_or(0);
    let m = (horizon / dt).round() as usize;
    if m == 0 || m >= samples {
        return Err(IntrinsicsError::Lag { lags: m, samples });
    }
    let n = traces.len() as f64;
    let corr: Vec<f64> = (0..=m)
        .map(|lag| {
            traces
                .iter()
                .map(|row| {
                    let l = row.len();
                    row[..l - lag].iter().zip(&row[lag..]).map(|(a, b)| a * b).sum::<f64>() / l as f64
                })
                .sum::<f64>()
                / n
        })
        .collect();
    let taper = |lag: usize| match window {
        LagWindow::None => 1.0,
        LagWindow::Hann => 0.5 * (1.0 + (std::f64::consts::PI * lag as f64 / m as f64).cos()),
    };
    // periodic layout of the symmetric lags; the +-M ends share one slot
    let p = 2 * m;
    let mut buf = vec![C64::new(0.0, 0.0); p];
    for lag in 0..=m {
        let c = corr[lag] * taper(lag);
        buf[lag] = C64::new(c, 0.0);
        if lag > 0 && lag < m {
            buf[p - lag] = C64::new(c, 0.0);
        }
    }
    fft::forward(&mut buf);
    let dw = 2.0 * std::f64::consts::PI / (p as f64 * dt);
    // ascending frequencies -M..M-1 with zero at index M
    let mut omega = Vec::with_capacity(p);
    let mut values = Vec::with_capacity(p);
    for j in 0..p {
        let signed = j as i64 - m as i64;
        let idx = signed.rem_euclid(p as i64) as usize;
        omega.push(signed as f64 * dw);
        values.push(buf[idx].re * dt);
    }
    Ok(PsdResult { omega, values, tau_max: m as f64 * dt, correlation: corr, dt })
}

/// Time spent inside `[a, b]`, with linear motion between stored frames.
/// With `require_exit`, a trajectory still inside at the last frame is a
/// horizon error.
pub fn dwell_time_trajectory(
    trajectory: &Trajectory,
    region: (f64, f64),
    require_exit: bool,
) -> Result<f64, IntrinsicsError> {
    let (a, b) = region;
    let x = &trajectory.positions;
    let t = &trajectory.times;
    if require_exit && x.last().is_some_and(|&x| x >= a && x <= b) {
        return Err(IntrinsicsError::Horizon { count: 1 });
    }
    let mut total = 0.0;
    for k in 0..x.len().saturating_sub(1) {
        let h = t[k + 1] - t[k];
        let (x0, x1) = (x[k], x[k + 1]);
        if x0 == x1 {
            if x0 >= a && x0 <= b {
                total += h;
            }
            continue;
        }
        // parameter interval of the segment inside [a, b]
        let (s_a, s_b) = ((a - x0) / (x1 - x0), (b - x0) / (x1 - x0));
        let lo = s_a.min(s_b).max(0.0);
        let hi = s_a.max(s_b).min(1.0);
        if hi > lo {
            total += (hi - lo) * h;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DwellSummary {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

pub fn dwell_times(
    ensemble: &TrajectoryEnsemble,
    region: (f64, f64),
    require_exit: bool,
) -> Result<Vec<f64>, IntrinsicsError> {
    let results: Vec<Result<f64, IntrinsicsError>> =
        ensemble.trajectories.par_iter().map(|t| dwell_time_trajectory(t, region, require_exit)).collect();
    let count = results.iter().filter(|r| matches!(r, Err(IntrinsicsError::Horizon { .. }))).count();
    if count > 0 {
        return Err(IntrinsicsError::Horizon { count });
    }
    results.into_iter().collect()
}

/// Mean and standard error of per-trajectory dwell times.
pub fn dwell_time_ensemble(
    ensemble: &TrajectoryEnsemble,
    region: (f64, f64),
    require_exit: bool,
) -> Result<DwellSummary, IntrinsicsError> {
    let times = dwell_times(ensemble, region, require_exit)?;
    let (mean, stderr) = mean_stderr(&times).ok_or(IntrinsicsError::EmptyDistribution { flagged: 0 })?;
    Ok(DwellSummary { mean, stderr, n: times.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityDwell {
    pub value: f64,
    /// Same quadrature using every other frame.
    pub coarse: f64,
    /// Richardson-extrapolated value `(4 T_h - T_2h) / 3`.
    pub extrapolated: f64,
    pub richardson_rel: f64,
}

fn occupation(frames: &[WaveFunction], weights: &[f64], h: f64) -> f64 {
    let kmax = frames.len() - 1;
    frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let w = if k == 0 || k == kmax { 0.5 * h } else { h };
            w * f.amplitudes().iter().zip(weights).map(|(z, q)| z.norm_sqr() * q).sum::<f64>()
        })
        .sum()
}

/// `int_0^T dt int_a^b |psi|^2 dx`, trapezoid in both variables, checked
/// against the same rule at twice the time step.
pub fn dwell_time_density(
    evolution: &Evolution,
    region: (f64, f64),
    check_horizon: bool,
) -> Result<DensityDwell, IntrinsicsError> {
    let frames = evolution.frames();
    if frames.len() < 3 || frames.len().is_multiple_of(2) {
        return Err(IntrinsicsError::Config("density dwell needs an odd number (>= 3) of frames".into()));
    }
    let weights = window_weights(evolution.grid(), region.0, region.1);
    if check_horizon {
        let last = frames.last().expect("frames");
        let mass: f64 = last.amplitudes().iter().zip(&weights).map(|(z, q)| z.norm_sqr() * q).sum();
        if mass > HORIZON_MASS_LIMIT {
            return Err(IntrinsicsError::DensityHorizon { mass });
        }
    }
    let h = evolution.dt_out();
    let value = occupation(frames, &weights, h);
    let coarse_frames: Vec<WaveFunction> = frames.iter().step_by(2).cloned().collect();
    let coarse = occupation(&coarse_frames, &weights, 2.0 * h);
    let extrapolated = (4.0 * value - coarse) / 3.0;
    let richardson_rel = (value - coarse).abs() / value.abs().max(f64::MIN_POSITIVE);
    if richardson_rel > RICHARDSON_LIMIT {
        return Err(IntrinsicsError::Quadrature { rel: richardson_rel });
    }
    Ok(DensityDwell { value, coarse, extrapolated, richardson_rel })
}

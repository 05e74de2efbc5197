//! Bohmian velocity field, quantum potential, quantum-equilibrium sampling
//! and trajectory integration over stored evolutions.

use std::io::Write;

use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;

use crate::qgrid::{fft, interp, Evolution, Grid1D, SpectralInterpolant, Units, WaveFunction};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BohmError {
    #[error("wavefunction node at x = {x}: density below threshold")]
    Node { x: f64 },
    #[error("x = {x} lies outside the grid domain")]
    OutOfDomain { x: f64 },
    #[error("evolution error: {0}")]
    Evolution(String),
}

fn node_mask(psi: &WaveFunction) -> Vec<bool> {
    let cutoff = psi.node_cutoff();
    psi.amplitudes().iter().map(|z| z.norm_sqr() < cutoff).collect()
}

/// A scalar field sampled on the grid with node flags.
#[derive(Debug, Clone)]
pub struct LocalField {
    grid: Grid1D,
    values: Vec<f64>,
    node: Vec<bool>,
}

impl LocalField {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_node(&self, j: usize) -> bool {
        self.node[j]
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    /// Cubic interpolation at `x`; fails when the nearest grid point is a node.
    pub fn at(&self, x: f64) -> Result<f64, BohmError> {
        if !self.grid.contains(x) {
            return Err(BohmError::OutOfDomain { x });
        }
        if self.node[self.grid.nearest_index(x)] {
            return Err(BohmError::Node { x });
        }
        Ok(self.at_clamped(x))
    }

    /// Cubic interpolation that falls back to the nearest non-node grid value
    /// whenever the stencil touches a node.
    pub fn at_clamped(&self, x: f64) -> f64 {
        let (idx, w) = interp::cubic_stencil(&self.grid, x);
        if idx.iter().all(|&j| !self.node[j]) {
            return idx.iter().zip(w).map(|(&j, w)| self.values[j] * w).sum();
        }
        let n = self.grid.len();
        let j0 = self.grid.nearest_index(x);
        for d in 0..=n / 2 {
            for j in [(j0 + d) % n, (j0 + n - d) % n] {
                if !self.node[j] {
                    return self.values[j];
                }
            }
        }
        0.0
    }
}

/// Bohmian velocity `(hbar/m) Im[psi'/psi]` with a spectral derivative.
pub fn velocity_grid(psi: &WaveFunction, units: &Units) -> LocalField {
    let dx = psi.grid().dx();
    let d = fft::derivative(psi.amplitudes(), dx);
    let node = node_mask(psi);
    let values = psi
        .amplitudes()
        .iter()
        .zip(&d)
        .zip(&node)
        .map(|((z, dz), &nd)| if nd { 0.0 } else { units.hbar / units.mass * (dz / z).im })
        .collect();
    LocalField { grid: *psi.grid(), values, node }
}

/// Velocity at an arbitrary point from the trigonometric interpolants of
/// `psi` and `psi'`; agrees with [`velocity_grid`] at grid points.
pub fn velocity_field(psi: &WaveFunction, x: f64, units: &Units) -> Result<f64, BohmError> {
    let grid = psi.grid();
    if !grid.contains(x) {
        return Err(BohmError::OutOfDomain { x });
    }
    let it = SpectralInterpolant::new(grid, psi.amplitudes());
    let z = it.at(x);
    if z.norm_sqr() < psi.node_cutoff() {
        return Err(BohmError::Node { x });
    }
    Ok(units.hbar / units.mass * (it.derivative_at(x) / z).im)
}

/// Quantum potential `-(hbar^2/2m) R''/R` with a spectral second derivative
/// of the modulus.
pub fn quantum_potential_grid(psi: &WaveFunction, units: &Units) -> LocalField {
    let r: Vec<f64> = psi.amplitudes().iter().map(|z| z.norm()).collect();
    let r2 = fft::second_derivative_real(&r, psi.grid().dx());
    let node = node_mask(psi);
    let c = -units.hbar * units.hbar / (2.0 * units.mass);
    let values = r.iter().zip(&r2).zip(&node).map(|((r, r2), &nd)| if nd { 0.0 } else { c * r2 / r }).collect();
    LocalField { grid: *psi.grid(), values, node }
}

pub fn quantum_potential(psi: &WaveFunction, x: f64, units: &Units) -> Result<f64, BohmError> {
    quantum_potential_grid(psi, units).at(x)
}

/// Off-grid evaluation of velocity and quantum potential from trigonometric
/// interpolants of `psi`, `|psi|` and `|psi|''`. Accurate to roundoff for
/// well-resolved states, at O(n) per evaluation.
#[derive(Debug, Clone)]
pub struct PointProbe {
    grid: Grid1D,
    units: Units,
    psi: SpectralInterpolant,
    r: SpectralInterpolant,
    r2: SpectralInterpolant,
    cutoff: f64,
    time: f64,
}

impl PointProbe {
    pub fn new(psi: &WaveFunction, units: &Units) -> Self {
        let grid = *psi.grid();
        let r: Vec<C64> = psi.amplitudes().iter().map(|z| C64::new(z.norm(), 0.0)).collect();
        let r2 = fft::second_derivative(&r, grid.dx());
        Self {
            grid,
            units: *units,
            psi: SpectralInterpolant::new(&grid, psi.amplitudes()),
            r: SpectralInterpolant::new(&grid, &r),
            r2: SpectralInterpolant::new(&grid, &r2),
            cutoff: psi.node_cutoff(),
            time: psi.time(),
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    fn check(&self, x: f64) -> Result<C64, BohmError> {
        if !self.grid.contains(x) {
            return Err(BohmError::OutOfDomain { x });
        }
        let z = self.psi.at(x);
        if z.norm_sqr() < self.cutoff {
            return Err(BohmError::Node { x });
        }
        Ok(z)
    }

    pub fn velocity(&self, x: f64) -> Result<f64, BohmError> {
        let z = self.check(x)?;
        Ok(self.units.hbar / self.units.mass * (self.psi.derivative_at(x) / z).im)
    }

    pub fn quantum_potential(&self, x: f64) -> Result<f64, BohmError> {
        self.check(x)?;
        let c = -self.units.hbar * self.units.hbar / (2.0 * self.units.mass);
        Ok(c * self.r2.at(x).re / self.r.at(x).re)
    }
}

/// Three-point finite-difference velocity, used for convergence cross-checks.
pub fn velocity_fd3(psi: &WaveFunction, units: &Units) -> Vec<f64> {
    let a = psi.amplitudes();
    let n = a.len();
    let dx = psi.grid().dx();
    (0..n)
        .map(|j| {
            let d = (a[(j + 1) % n] - a[(j + n - 1) % n]) / (2.0 * dx);
            units.hbar / units.mass * (d / a[j]).im
        })
        .collect()
}

/// Three-point finite-difference quantum potential.
pub fn quantum_potential_fd3(psi: &WaveFunction, units: &Units) -> Vec<f64> {
    let r: Vec<f64> = psi.amplitudes().iter().map(|z| z.norm()).collect();
    let n = r.len();
    let dx = psi.grid().dx();
    let c = -units.hbar * units.hbar / (2.0 * units.mass);
    (0..n)
        .map(|j| {
            let d2 = (r[(j + 1) % n] - 2.0 * r[j] + r[(j + n - 1) % n]) / (dx * dx);
            c * d2 / r[j]
        })
        .collect()
}

/// Draws `n` positions from `|psi|^2` by inverse CDF over cells centred on
/// the grid points, uniform within a cell.
/// Uses the positions stream of `seed` (see [`crate::seed`]).
pub fn sample_initial_positions(psi: &WaveFunction, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = crate::seed::stream(seed, crate::seed::POSITIONS, 0);
    sample_positions_with(psi, n, &mut rng)
}

pub fn sample_positions_with<R: Rng>(psi: &WaveFunction, n: usize, rng: &mut R) -> Vec<f64> {
    let grid = psi.grid();
    let dx = grid.dx();
    let mut cdf = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    for z in psi.amplitudes() {
        acc += z.norm_sqr();
        cdf.push(acc);
    }
    let total = acc;
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let j = cdf.partition_point(|&c| c <= u).min(grid.len() - 1);
            let below = if j == 0 { 0.0 } else { cdf[j - 1] };
            let mass = cdf[j] - below;
            let frac = if mass > 0.0 { (u - below) / mass } else { 0.5 };
            let mut x = grid.x(j) + (frac - 0.5) * dx;
            if x < grid.x_min() {
                x += grid.length();
            } else if x >= grid.x_max() {
                x -= grid.length();
            }
            x
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub experiment_id: usize,
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    /// Set when the trajectory left the grid domain; later positions repeat
    /// the exit position.
    pub truncated: bool,
}

impl Trajectory {
    /// Every `stride`-th stored point, matching [`Evolution::subsample`].
    pub fn subsample(&self, stride: usize) -> Self {
        let s = stride.max(1);
        Self {
            experiment_id: self.experiment_id,
            times: self.times.iter().step_by(s).copied().collect(),
            positions: self.positions.iter().step_by(s).copied().collect(),
            truncated: self.truncated,
        }
    }

    /// Position at a stored time, if `t` is on the time axis.
    pub fn position_at(&self, t: f64) -> Option<f64> {
        let h = if self.times.len() > 1 { self.times[1] - self.times[0] } else { 1.0 };
        self.times.iter().position(|&s| (s - t).abs() <= 1e-6 * h).map(|k| self.positions[k])
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    pub trajectories: Vec<Trajectory>,
    pub seed: u64,
}

impl TrajectoryEnsemble {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.trajectories[0].times
    }

    pub fn positions_at_frame(&self, k: usize) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.positions[k]).collect()
    }

    pub fn truncated_count(&self) -> usize {
        self.trajectories.iter().filter(|t| t.truncated).count()
    }

    /// True when no two trajectories swap order at any stored frame.
    pub fn is_order_preserving(&self) -> bool {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.trajectories[a].positions[0].total_cmp(&self.trajectories[b].positions[0]));
        let frames = self.times().len();
        (0..frames).all(|k| {
            order.windows(2).all(|w| {
                let a = &self.trajectories[w[0]];
                let b = &self.trajectories[w[1]];
                a.positions[0] == b.positions[0] || a.positions[k] < b.positions[k]
            })
        })
    }

    /// CSV with columns `t, x_1, ..., x_N` in full precision.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "t")?;
        for tr in &self.trajectories {
            write!(out, ",x_{}", tr.experiment_id + 1)?;
        }
        writeln!(out)?;
        for (k, t) in self.times().iter().enumerate() {
            write!(out, "{t:.16e}")?;
            for tr in &self.trajectories {
                write!(out, ",{:.16e}", tr.positions[k])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrajectoryOptions {
    /// RK4 steps per stored frame interval.
    pub substeps: usize,
    pub seed: u64,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self { substeps: 4, seed: 0 }
    }
}

/// Integrates trajectories through a stored evolution with RK4, velocity
/// interpolated cubically in space and linearly in time between frames.
/// Runs data-parallel over the starts.
pub fn integrate_trajectories(
    evolution: &Evolution,
    starts: &[f64],
    opts: TrajectoryOptions,
) -> Result<TrajectoryEnsemble, BohmError> {
    let grid = *evolution.grid();
    if let Some(&x) = starts.iter().find(|&&x| !grid.contains(x)) {
        return Err(BohmError::OutOfDomain { x });
    }
    let units = *evolution.units();
    let fields: Vec<LocalField> = evolution.frames().par_iter().map(|psi| velocity_grid(psi, &units)).collect();
    let times = evolution.times();
    let substeps = opts.substeps.max(1);
    let trajectories = starts
        .par_iter()
        .enumerate()
        .map(|(id, &x0)| {
            let mut positions = Vec::with_capacity(times.len());
            positions.push(x0);
            let mut x = x0;
            let mut truncated = false;
            for k in 0..times.len().saturating_sub(1) {
                if !truncated {
                    let h = (times[k + 1] - times[k]) / substeps as f64;
                    let v = |x: f64, theta: f64| {
                        (1.0 - theta) * fields[k].at_clamped(x) + theta * fields[k + 1].at_clamped(x)
                    };
                    for s in 0..substeps {
                        let th = s as f64 / substeps as f64;
                        let dth = 1.0 / substeps as f64;
                        let k1 = v(x, th);
                        let k2 = v(x + 0.5 * h * k1, th + 0.5 * dth);
                        let k3 = v(x + 0.5 * h * k2, th + 0.5 * dth);
                        let k4 = v(x + h * k3, th + dth);
                        let nx = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                        if !grid.contains(nx) || !nx.is_finite() {
                            truncated = true;
                            break;
                        }
                        x = nx;
                    }
                }
                positions.push(x);
            }
            Trajectory { experiment_id: id, times: times.clone(), positions, truncated }
        })
        .collect();
    Ok(TrajectoryEnsemble { trajectories, seed: opts.seed })
}

/// L1 distance between the ensemble histogram at frame `k` and the exact
/// bin probabilities of `|psi|^2`. Bins cover the central `1 - 2e-4` of the
/// probability with two extra tail bins.
pub fn equivariance_l1(ensemble: &TrajectoryEnsemble, evolution: &Evolution, k: usize, bins: usize) -> f64 {
    let psi = evolution.frame(k);
    let grid = psi.grid();
    let rho = psi.density();
    let (lo, hi) = quantile_range(psi, 1e-4);
    let width = (hi - lo) / bins as f64;
    let mut exact: Vec<f64> = (0..bins)
        .map(|b| crate::qgrid::integrate_window(grid, &rho, lo + b as f64 * width, lo + (b + 1) as f64 * width))
        .collect();
    let inside: f64 = exact.iter().sum();
    let total = psi.norm_sqr();
    let left = crate::qgrid::integrate_window(grid, &rho, grid.x_min(), lo);
    exact.push(left);
    exact.push((total - inside - left).max(0.0));
    let mut counts = vec![0usize; bins + 2];
    for x in ensemble.positions_at_frame(k) {
        if x < lo {
            counts[bins] += 1;
        } else if x >= hi {
            counts[bins + 1] += 1;
        } else {
            counts[(((x - lo) / width) as usize).min(bins - 1)] += 1;
        }
    }
    let n = ensemble.len() as f64;
    counts.iter().zip(&exact).map(|(&c, p)| (c as f64 / n - p / total).abs()).sum()
}

fn quantile_range(psi: &WaveFunction, tail: f64) -> (f64, f64) {
    let grid = psi.grid();
    let dx = grid.dx();
    let rho = psi.density();
    let total: f64 = rho.iter().sum();
    let mut acc = 0.0;
    let mut lo = grid.x_min();
    let mut hi = grid.x_max();
    let mut found_lo = false;
    for (j, r) in rho.iter().enumerate() {
        acc += r;
        if !found_lo && acc >= tail * total {
            lo = grid.x(j) - dx;
            found_lo = true;
        }
        if acc >= (1.0 - tail) * total {
            hi = grid.x(j) + dx;
            break;
        }
    }
    (lo.max(grid.x_min()), hi.min(grid.x_max()))
}

/// Complex spectral derivative, exposed for weak-value cross-checks.
pub fn spectral_derivative(psi: &WaveFunction) -> Vec<C64> {
    fft::derivative(psi.amplitudes(), psi.grid().dx())
}

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::fft;
use super::{Grid1D, Kinetic, PotentialModel, QgridError, Units, WaveFunction};

/// Norm drift beyond which a run is treated as unstable.
pub const NORM_DRIFT_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Strang splitting `V/2 - T - V/2` with Fourier kinetic energy.
    #[default]
    SplitOperator,
    /// Cayley form with the three-point kinetic stencil.
    CrankNicolson,
}

impl Method {
    /// Kinetic discretization whose Hamiltonian this propagator conserves.
    pub fn kinetic(self) -> Kinetic {
        match self {
            Method::SplitOperator => Kinetic::Spectral,
            Method::CrankNicolson => Kinetic::Stencil3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagatorConfig {
    pub dt: f64,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_steps")]
    pub steps_per_output: usize,
}

fn default_steps() -> usize {
    10
}

impl PropagatorConfig {
    pub fn new(dt: f64, method: Method, steps_per_output: usize) -> Self {
        Self { dt, method, steps_per_output }
    }

    pub fn dt_out(&self) -> f64 {
        self.dt * self.steps_per_output as f64
    }

    pub fn validate(&self) -> Result<(), QgridError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(QgridError::StepSize { dt: self.dt, reason: "dt must be positive".into() });
        }
        if self.steps_per_output == 0 {
            return Err(QgridError::Config("steps_per_output must be at least 1".into()));
        }
        Ok(())
    }

    /// Same output spacing sampled twice as often.
    pub fn halved_output(&self) -> Self {
        if self.steps_per_output.is_multiple_of(2) {
            Self { steps_per_output: self.steps_per_output / 2, ..*self }
        } else {
            Self { dt: self.dt / 2.0, ..*self }
        }
    }
}

/// Propagates `psi` by `duration` (negative runs backwards).
pub fn propagate(
    psi: &WaveFunction,
    potential: &PotentialModel,
    units: &Units,
    cfg: &PropagatorConfig,
    duration: f64,
) -> Result<WaveFunction, QgridError> {
    cfg.validate()?;
    potential.validate(psi.grid())?;
    let mut stepper = Stepper::new(*psi.grid(), potential.clone(), *units, cfg.method);
    let mut out = psi.clone();
    stepper.advance(&mut out, duration, cfg.dt)?;
    Ok(out)
}

/// Propagator state reusable across many advances on one grid.
#[derive(Debug, Clone)]
pub struct Stepper {
    grid: Grid1D,
    potential: PotentialModel,
    units: Units,
    method: Method,
    k2: Vec<f64>,
}

impl Stepper {
    pub fn new(grid: Grid1D, potential: PotentialModel, units: Units, method: Method) -> Self {
        let k2 = fft::wavenumbers(grid.len(), grid.dx()).into_iter().map(|k| k * k).collect();
        Self { grid, potential, units, method, k2 }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    /// Advances in place by `duration` using steps no longer than `dt`.
    pub fn advance(&mut self, psi: &mut WaveFunction, duration: f64, dt: f64) -> Result<(), QgridError> {
        self.grid.check_same(psi.grid())?;
        if duration == 0.0 {
            return Ok(());
        }
        let n0 = psi.norm_sqr();
        let t0 = psi.time();
        let steps = (duration.abs() / dt - 1e-9).ceil().max(1.0) as usize;
        let h = duration / steps as f64;
        if self.method == Method::SplitOperator && self.potential.is_free() {
            // free evolution is diagonal in k: one exact step
            self.kinetic_phase(psi.amplitudes_mut(), duration);
        } else {
            for s in 0..steps {
                let t = t0 + s as f64 * h;
                match self.method {
                    Method::SplitOperator => self.split_step(psi.amplitudes_mut(), t, h)?,
                    Method::CrankNicolson => self.cn_step(psi.amplitudes_mut(), t, h)?,
                }
            }
        }
        psi.set_time(t0 + duration);
        let drift = (psi.norm_sqr() - n0).abs();
        if !(drift <= NORM_DRIFT_LIMIT) {
            return Err(QgridError::StepSize { dt: h.abs(), reason: format!("norm drifted by {drift:e}") });
        }
        Ok(())
    }

    fn kinetic_phase(&self, amps: &mut [C64], h: f64) {
        let c = self.units.hbar * h / (2.0 * self.units.mass);
        fft::forward(amps);
        for (z, k2) in amps.iter_mut().zip(&self.k2) {
            *z *= C64::from_polar(1.0, -c * k2);
        }
        fft::inverse(amps);
    }

    fn split_step(&self, amps: &mut [C64], t: f64, h: f64) -> Result<(), QgridError> {
        let v = self.potential.sample(&self.grid, t + 0.5 * h, &self.units)?;
        let half = 0.5 * h / self.units.hbar;
        let phases: Vec<C64> = v.iter().map(|v| C64::from_polar(1.0, -v * half)).collect();
        amps.iter_mut().zip(&phases).for_each(|(z, p)| *z *= p);
        self.kinetic_phase(amps, h);
        amps.iter_mut().zip(&phases).for_each(|(z, p)| *z *= p);
        Ok(())
    }

    fn cn_step(&self, amps: &mut [C64], t: f64, h: f64) -> Result<(), QgridError> {
        let n = amps.len();
        let dx = self.grid.dx();
        let v = self.potential.sample(&self.grid, t + 0.5 * h, &self.units)?;
        let c = self.units.hbar * self.units.hbar / (2.0 * self.units.mass * dx * dx);
        // (1 + i h H / 2 hbar) psi' = (1 - i h H / 2 hbar) psi
        let f = C64::new(0.0, 0.5 * h / self.units.hbar);
        let off = -f * c;
        let diag: Vec<C64> = v.iter().map(|v| C64::new(1.0, 0.0) + f * (2.0 * c + v)).collect();
        let rhs: Vec<C64> = (0..n)
            .map(|j| {
                let l = amps[(j + n - 1) % n];
                let r = amps[(j + 1) % n];
                let hpsi = (amps[j] * 2.0 - l - r) * c + amps[j] * v[j];
                amps[j] - f * hpsi
            })
            .collect();
        let x = solve_cyclic_tridiagonal(off, &diag, off, &rhs)?;
        amps.copy_from_slice(&x);
        Ok(())
    }
}

/// Solves a periodic tridiagonal system with constant off-diagonals
/// `sub` (below) and `sup` (above), wrapping at the corners.
pub fn solve_cyclic_tridiagonal(sub: C64, diag: &[C64], sup: C64, rhs: &[C64]) -> Result<Vec<C64>, QgridError> {
    let n = diag.len();
    let alpha = sup; // A[n-1][0]
    let beta = sub; // A[0][n-1]
    let gamma = -diag[0];
    let mut bb = diag.to_vec();
    bb[0] -= gamma;
    bb[n - 1] -= alpha * beta / gamma;
    let x = solve_tridiagonal(sub, &bb, sup, rhs)?;
    let mut u = vec![C64::new(0.0, 0.0); n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(sub, &bb, sup, &u)?;
    let fact = (x[0] + beta * x[n - 1] / gamma) / (C64::new(1.0, 0.0) + z[0] + beta * z[n - 1] / gamma);
    Ok(x.iter().zip(&z).map(|(x, z)| x - fact * z).collect())
}

fn solve_tridiagonal(sub: C64, diag: &[C64], sup: C64, rhs: &[C64]) -> Result<Vec<C64>, QgridError> {
    let n = diag.len();
    let mut cp = vec![C64::new(0.0, 0.0); n];
    let mut dp = vec![C64::new(0.0, 0.0); n];
    let mut denom = diag[0];
    if denom.norm() == 0.0 {
        return Err(QgridError::Numeric("singular tridiagonal system".into()));
    }
    cp[0] = sup / denom;
    dp[0] = rhs[0] / denom;
    for j in 1..n {
        denom = diag[j] - sub * cp[j - 1];
        if denom.norm() == 0.0 {
            return Err(QgridError::Numeric("singular tridiagonal system".into()));
        }
        cp[j] = sup / denom;
        dp[j] = (rhs[j] - sub * dp[j - 1]) / denom;
    }
    let mut x = vec![C64::new(0.0, 0.0); n];
    x[n - 1] = dp[n - 1];
    for j in (0..n - 1).rev() {
        x[j] = dp[j] - cp[j] * x[j + 1];
    }
    Ok(x)
}

/// Stored sequence of wavefunctions at uniform output spacing.
#[derive(Debug, Clone)]
pub struct Evolution {
    frames: Vec<WaveFunction>,
    potential: PotentialModel,
    units: Units,
    cfg: PropagatorConfig,
}

impl Evolution {
    pub fn from_frames(
        frames: Vec<WaveFunction>,
        potential: PotentialModel,
        units: Units,
        cfg: PropagatorConfig,
    ) -> Result<Self, QgridError> {
        if frames.is_empty() {
            return Err(QgridError::Config("evolution needs at least one frame".into()));
        }
        if frames.windows(2).any(|w| w[1].time() <= w[0].time()) {
            return Err(QgridError::Config("evolution frames must be strictly time-ordered".into()));
        }
        Ok(Self { frames, potential, units, cfg })
    }

    pub fn frames(&self) -> &[WaveFunction] {
        &self.frames
    }

    pub fn frame(&self, k: usize) -> &WaveFunction {
        &self.frames[k]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.time()).collect()
    }

    pub fn potential(&self) -> &PotentialModel {
        &self.potential
    }

    pub fn units(&self) -> &Units {
        &self.units
    }

    pub fn config(&self) -> &PropagatorConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Grid1D {
        self.frames[0].grid()
    }

    /// Output spacing (zero for a single frame).
    pub fn dt_out(&self) -> f64 {
        if self.frames.len() < 2 {
            0.0
        } else {
            self.frames[1].time() - self.frames[0].time()
        }
    }

    /// Index of the stored frame at time `t`, if one exists.
    pub fn frame_index(&self, t: f64) -> Option<usize> {
        let t0 = self.frames[0].time();
        if self.frames.len() == 1 {
            return ((t - t0).abs() < 1e-9).then_some(0);
        }
        let h = self.dt_out();
        let k = ((t - t0) / h).round();
        if k < 0.0 || k as usize >= self.frames.len() {
            return None;
        }
        let k = k as usize;
        ((self.frames[k].time() - t).abs() <= 1e-6 * h).then_some(k)
    }

    /// Every `stride`-th frame.
    pub fn subsample(&self, stride: usize) -> Self {
        let frames = self.frames.iter().step_by(stride.max(1)).cloned().collect();
        let cfg = PropagatorConfig { steps_per_output: self.cfg.steps_per_output * stride.max(1), ..self.cfg };
        Self { frames, potential: self.potential.clone(), units: self.units, cfg }
    }
}

/// Propagates for `duration`, storing a frame every `cfg.dt_out()`.
pub fn propagate_frames(
    psi: &WaveFunction,
    potential: &PotentialModel,
    units: &Units,
    cfg: &PropagatorConfig,
    duration: f64,
) -> Result<Evolution, QgridError> {
    cfg.validate()?;
    potential.validate(psi.grid())?;
    if duration < 0.0 {
        return Err(QgridError::Config("stored evolutions run forward in time".into()));
    }
    let dt_out = cfg.dt_out();
    let outputs = (duration / dt_out - 1e-9).ceil().max(0.0) as usize;
    let mut stepper = Stepper::new(*psi.grid(), potential.clone(), *units, cfg.method);
    let mut frames = Vec::with_capacity(outputs + 1);
    let mut cur = psi.clone();
    let t0 = psi.time();
    frames.push(cur.clone());
    for k in 1..=outputs {
        stepper.advance(&mut cur, dt_out, cfg.dt)?;
        // keep the time axis exact
        cur.set_time(t0 + k as f64 * dt_out);
        frames.push(cur.clone());
    }
    Evolution::from_frames(frames, potential.clone(), *units, *cfg)
}

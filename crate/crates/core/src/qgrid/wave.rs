use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::{Grid1D, QgridError};

/// Physical constants. Natural units (all 1) by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub charge: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for Units {
    fn default() -> Self {
        Self { hbar: 1.0, mass: 1.0, charge: 1.0 }
    }
}

/// Relative density below which a grid point counts as a node.
pub const NODE_THRESHOLD: f64 = 1e-12;

/// Complex amplitudes on a grid at a given time.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    grid: Grid1D,
    amplitudes: Vec<C64>,
    time: f64,
}

impl WaveFunction {
    pub fn new(grid: Grid1D, amplitudes: Vec<C64>, time: f64) -> Result<Self, QgridError> {
        if amplitudes.len() != grid.len() {
            return Err(QgridError::Dimension(format!(
                "{} amplitudes for a grid of {} points",
                amplitudes.len(),
                grid.len()
            )));
        }
        if amplitudes.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(QgridError::Numeric("non-finite amplitude".into()));
        }
        Ok(Self { grid, amplitudes, time })
    }

    pub fn from_fn(grid: Grid1D, time: f64, f: impl Fn(f64) -> C64) -> Result<Self, QgridError> {
        let amps = grid.points().into_iter().map(f).collect();
        Self::new(grid, amps, time)
    }

    /// Normalized Gaussian packet whose density has standard deviation `sigma`.
    pub fn gaussian(grid: Grid1D, center: f64, sigma: f64, wavenumber: f64) -> Result<Self, QgridError> {
        if !(sigma > 0.0) {
            return Err(QgridError::Config(format!("gaussian width must be positive, got {sigma}")));
        }
        let norm = (2.0 * PI * sigma * sigma).powf(-0.25);
        let mut psi = Self::from_fn(grid, 0.0, |x| {
            let d = x - center;
            norm * (-d * d / (4.0 * sigma * sigma)).exp() * C64::from_polar(1.0, wavenumber * d)
        })?;
        psi.normalize()?;
        Ok(psi)
    }

    /// Plane wave `exp(i k x) / sqrt(L)`.
    pub fn plane_wave(grid: Grid1D, wavenumber: f64) -> Self {
        let a = 1.0 / grid.length().sqrt();
        let amps = grid.points().into_iter().map(|x| C64::from_polar(a, wavenumber * x)).collect();
        Self { grid, amplitudes: amps, time: 0.0 }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn set_time(&mut self, time: f64) {
        self.time = time;
    }

    pub fn density(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    pub fn normalize(&mut self) -> Result<(), QgridError> {
        let n = self.norm_sqr().sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(QgridError::Numeric("cannot normalize a zero wavefunction".into()));
        }
        let s = 1.0 / n;
        self.amplitudes.iter_mut().for_each(|z| *z *= s);
        Ok(())
    }

    /// `<self|other>` by grid quadrature.
    pub fn inner(&self, other: &WaveFunction) -> Result<C64, QgridError> {
        self.grid.check_same(&other.grid)?;
        Ok(inner(&self.amplitudes, &other.amplitudes, self.grid.dx()))
    }

    /// Max density times [`NODE_THRESHOLD`].
    pub fn node_cutoff(&self) -> f64 {
        let max = self.amplitudes.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        max * NODE_THRESHOLD
    }

    pub fn is_node(&self, j: usize) -> bool {
        self.amplitudes[j].norm_sqr() < self.node_cutoff()
    }

    /// Probability inside `[a, b]`, trapezoid with linear edge cells.
    pub fn probability_in(&self, a: f64, b: f64) -> f64 {
        integrate_window(&self.grid, &self.density(), a, b)
    }
}

/// Grid inner product `sum conj(a) b dx`.
pub fn inner(a: &[C64], b: &[C64], dx: f64) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>() * dx
}

/// Trapezoid integral of a sampled periodic field over `[a, b]` within one
/// period, with the partial edge cells handled by linear interpolation.
pub fn integrate_window(grid: &Grid1D, values: &[f64], a: f64, b: f64) -> f64 {
    window_weights(grid, a, b).iter().zip(values).map(|(w, v)| w * v).sum()
}

/// Quadrature weights `w_j` with `sum_j w_j f_j` the trapezoid integral of
/// the linear interpolant of `f` over `[a, b]`. Interior weights are `dx`.
pub fn window_weights(grid: &Grid1D, a: f64, b: f64) -> Vec<f64> {
    let n = grid.len();
    let dx = grid.dx();
    let mut w = vec![0.0; n];
    if b <= a {
        return w;
    }
    if b - a >= grid.length() {
        return vec![dx; n];
    }
    let ni = n as i64;
    // adds coef * f(s) with f linear between nodes
    let mut add = |s: f64, coef: f64| {
        let base = s.floor();
        let u = s - base;
        w[(base as i64).rem_euclid(ni) as usize] += coef * (1.0 - u);
        w[(base as i64 + 1).rem_euclid(ni) as usize] += coef * u;
    };
    let sa = (a - grid.x_min()) / dx;
    let sb = (b - grid.x_min()) / dx;
    let first = sa.floor() as i64 + 1;
    let last = sb.ceil() as i64 - 1;
    if first > last {
        let c = 0.5 * (b - a);
        add(sa, c);
        add(sb, c);
        return w;
    }
    let head = 0.5 * (first as f64 - sa) * dx;
    add(sa, head);
    add(first as f64, head);
    for s in first..last {
        add(s as f64, 0.5 * dx);
        add((s + 1) as f64, 0.5 * dx);
    }
    let tail = 0.5 * (sb - last as f64) * dx;
    add(last as f64, tail);
    add(sb, tail);
    w
}

/// Modulus and unwrapped phase of a wavefunction.
#[derive(Debug, Clone)]
pub struct PolarForm {
    pub modulus: Vec<f64>,
    /// `hbar * unwrapped arg(psi)`; `None` at nodes.
    pub phase: Vec<Option<f64>>,
    /// Multiple of `2 pi` added to the principal argument at each point.
    pub branch: Vec<i64>,
}

impl PolarForm {
    pub fn reconstruct(&self, j: usize, hbar: f64) -> Option<C64> {
        self.phase[j].map(|s| C64::from_polar(self.modulus[j], s / hbar))
    }
}

/// Polar decomposition `psi = R exp(i S / hbar)`.
///
/// The phase is unwrapped cumulatively along increasing `x` and the unwrapping
/// restarts after every node, where the phase is left undefined.
pub fn polar_decompose(psi: &WaveFunction, hbar: f64) -> PolarForm {
    let cutoff = psi.node_cutoff();
    let n = psi.grid.len();
    let mut modulus = Vec::with_capacity(n);
    let mut phase = Vec::with_capacity(n);
    let mut branch = Vec::with_capacity(n);
    let mut prev: Option<f64> = None;
    let mut offset: i64 = 0;
    for z in &psi.amplitudes {
        modulus.push(z.norm());
        if z.norm_sqr() < cutoff {
            phase.push(None);
            branch.push(0);
            prev = None;
            offset = 0;
            continue;
        }
        let arg = z.arg();
        if let Some(p) = prev {
            let mut cand = arg + 2.0 * PI * offset as f64;
            while cand - p > PI {
                offset -= 1;
                cand -= 2.0 * PI;
            }
            while cand - p < -PI {
                offset += 1;
                cand += 2.0 * PI;
            }
        }
        let unwrapped = arg + 2.0 * PI * offset as f64;
        prev = Some(unwrapped);
        phase.push(Some(hbar * unwrapped));
        branch.push(offset);
    }
    PolarForm { modulus, phase, branch }
}

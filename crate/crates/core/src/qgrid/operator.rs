use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::fft;
use super::{window_weights, Grid1D, PotentialModel, QgridError, Units, WaveFunction};

/// Largest grid for which a dense eigendecomposition is attempted.
pub const MAX_DENSE_POINTS: usize = 2048;

/// Discretization of the kinetic energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Kinetic {
    /// Fourier second derivative (pairs with the split-operator propagator).
    #[default]
    Spectral,
    /// Three-point stencil (pairs with Crank-Nicolson).
    Stencil3,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorLabel {
    Position,
    Momentum,
    Hamiltonian,
    Window { a: f64, b: f64 },
    Custom(String),
}

impl fmt::Display for OperatorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorLabel::Position => write!(f, "position"),
            OperatorLabel::Momentum => write!(f, "momentum"),
            OperatorLabel::Hamiltonian => write!(f, "hamiltonian"),
            OperatorLabel::Window { a, b } => write!(f, "window[{a},{b}]"),
            OperatorLabel::Custom(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone)]
enum Repr {
    Diagonal(Vec<f64>),
    Momentum,
    Hamiltonian { potential: Vec<f64>, kinetic: Kinetic },
    Dense(Arc<DenseSpectrum>),
}

/// Eigenpairs with eigenvectors stored as unit Euclidean columns.
#[derive(Debug, Clone)]
pub struct DenseSpectrum {
    pub values: Vec<f64>,
    /// `n x m`, column `i` is eigenvector `i` (unit Euclidean norm).
    pub vectors: DMatrix<C64>,
}

/// A Hermitian observable on the grid together with its spectral
/// decomposition. Position and window projectors are diagonal, momentum
/// uses the Fourier basis implicitly, and Hamiltonians are diagonalized
/// densely on demand.
#[derive(Debug, Clone)]
pub struct SpectralOperator {
    label: OperatorLabel,
    grid: Grid1D,
    units: Units,
    repr: Repr,
    truncation: Option<usize>,
    dense: OnceLock<Result<Arc<DenseSpectrum>, QgridError>>,
}

impl SpectralOperator {
    fn with_repr(label: OperatorLabel, grid: Grid1D, units: Units, repr: Repr) -> Self {
        Self { label, grid, units, repr, truncation: None, dense: OnceLock::new() }
    }

    pub fn position(grid: Grid1D) -> Self {
        Self::with_repr(OperatorLabel::Position, grid, Units::default(), Repr::Diagonal(grid.points()))
    }

    pub fn momentum(grid: Grid1D, units: Units) -> Self {
        Self::with_repr(OperatorLabel::Momentum, grid, units, Repr::Momentum)
    }

    /// Projector onto `[a, b]`: one strictly inside, zero outside, and the
    /// trapezoid edge fractions on the cells cut by `a` and `b`, so that
    /// `<psi|A|psi>` equals [`super::integrate_window`] of the density.
    pub fn window(grid: Grid1D, a: f64, b: f64) -> Self {
        let dx = grid.dx();
        let diag = window_weights(&grid, a, b).into_iter().map(|w| w / dx).collect();
        Self::with_repr(OperatorLabel::Window { a, b }, grid, Units::default(), Repr::Diagonal(diag))
    }

    /// Operator defined by eigenvalues and grid eigenfunctions normalized to
    /// unit L2 norm (`sum |phi|^2 dx = 1`). The set must be orthonormal.
    pub fn from_eigenpairs(
        label: &str,
        grid: Grid1D,
        values: Vec<f64>,
        functions: &[Vec<C64>],
    ) -> Result<Self, QgridError> {
        if values.len() != functions.len() || values.is_empty() {
            return Err(QgridError::Dimension("eigenvalue and eigenvector counts differ".into()));
        }
        let n = grid.len();
        let mut vectors = DMatrix::<C64>::zeros(n, values.len());
        let s = grid.dx().sqrt();
        for (i, f) in functions.iter().enumerate() {
            if f.len() != n {
                return Err(QgridError::Dimension(format!("eigenvector {i} has {} points", f.len())));
            }
            for j in 0..n {
                vectors[(j, i)] = f[j] * s;
            }
        }
        let gram = vectors.adjoint() * &vectors;
        for a in 0..values.len() {
            for b in 0..values.len() {
                let target = if a == b { 1.0 } else { 0.0 };
                if (gram[(a, b)] - C64::new(target, 0.0)).norm() > 1e-8 {
                    return Err(QgridError::Numeric(format!("eigenvectors {a} and {b} are not orthonormal")));
                }
            }
        }
        let spectrum = Arc::new(DenseSpectrum { values, vectors });
        Ok(Self::with_repr(OperatorLabel::Custom(label.to_string()), grid, Units::default(), Repr::Dense(spectrum)))
    }

    /// Restricts a densely diagonalized operator to its `m` lowest eigenpairs.
    pub fn truncated(mut self, m: usize) -> Self {
        self.truncation = Some(m.max(1));
        self.dense = OnceLock::new();
        self
    }

    pub fn label(&self) -> &OperatorLabel {
        &self.label
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn units(&self) -> &Units {
        &self.units
    }

    /// Potential samples for a Hamiltonian.
    pub fn potential_samples(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Hamiltonian { potential, .. } => Some(potential),
            _ => None,
        }
    }

    pub fn kinetic(&self) -> Option<Kinetic> {
        match &self.repr {
            Repr::Hamiltonian { kinetic, .. } => Some(*kinetic),
            _ => None,
        }
    }

    /// Direct application on grid amplitudes (FFT, stencil or diagonal).
    pub fn apply(&self, psi: &[C64]) -> Vec<C64> {
        let dx = self.grid.dx();
        match &self.repr {
            Repr::Diagonal(d) => psi.iter().zip(d).map(|(z, v)| z * v).collect(),
            Repr::Momentum => {
                // the Nyquist mode keeps its eigenvalue so apply and expansion agree
                let hbar = self.units.hbar;
                fft::apply_multiplier(psi, dx, |k| C64::new(hbar * k, 0.0))
            }
            Repr::Hamiltonian { potential, kinetic } => {
                let c = self.units.hbar * self.units.hbar / (2.0 * self.units.mass);
                let mut out = match kinetic {
                    Kinetic::Spectral => fft::apply_multiplier(psi, dx, |k| C64::new(c * k * k, 0.0)),
                    Kinetic::Stencil3 => {
                        let n = psi.len();
                        (0..n)
                            .map(|j| {
                                let l = psi[(j + n - 1) % n];
                                let r = psi[(j + 1) % n];
                                (psi[j] * 2.0 - l - r) * (c / (dx * dx))
                            })
                            .collect()
                    }
                };
                for ((o, z), v) in out.iter_mut().zip(psi).zip(potential) {
                    *o += z * v;
                }
                out
            }
            Repr::Dense(_) => self.apply_spectral(psi).expect("dense spectrum is always available"),
        }
    }

    pub fn apply_wave(&self, psi: &WaveFunction) -> Result<Vec<C64>, QgridError> {
        self.grid.check_same(psi.grid())?;
        Ok(self.apply(psi.amplitudes()))
    }

    fn dense_spectrum(&self) -> Result<Arc<DenseSpectrum>, QgridError> {
        if let Repr::Dense(s) = &self.repr {
            return Ok(s.clone());
        }
        self.dense
            .get_or_init(|| {
                let n = self.grid.len();
                if n > MAX_DENSE_POINTS {
                    return Err(QgridError::Config(format!(
                        "dense eigendecomposition limited to {MAX_DENSE_POINTS} points, grid has {n}"
                    )));
                }
                let matrix = self.real_matrix()?;
                let eig = SymmetricEigen::new(matrix);
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
                let m = self.truncation.unwrap_or(n).min(n);
                let mut vectors = DMatrix::<C64>::zeros(n, m);
                let mut values = Vec::with_capacity(m);
                for (col, &i) in order.iter().take(m).enumerate() {
                    values.push(eig.eigenvalues[i]);
                    // fix the sign so the largest component is positive
                    let v = eig.eigenvectors.column(i);
                    let imax = v.iamax();
                    let sign = if v[imax] < 0.0 { -1.0 } else { 1.0 };
                    for j in 0..n {
                        vectors[(j, col)] = C64::new(sign * v[j], 0.0);
                    }
                }
                Ok(Arc::new(DenseSpectrum { values, vectors }))
            })
            .clone()
    }

    fn real_matrix(&self) -> Result<DMatrix<f64>, QgridError> {
        let n = self.grid.len();
        let dx = self.grid.dx();
        match &self.repr {
            Repr::Hamiltonian { potential, kinetic } => {
                let c = self.units.hbar * self.units.hbar / (2.0 * self.units.mass);
                let row: Vec<f64> = match kinetic {
                    Kinetic::Spectral => {
                        let ks = fft::wavenumbers(n, dx);
                        (0..n)
                            .map(|d| ks.iter().map(|k| k * k * (k * d as f64 * dx).cos()).sum::<f64>() * c / n as f64)
                            .collect()
                    }
                    Kinetic::Stencil3 => {
                        let mut r = vec![0.0; n];
                        r[0] = 2.0 * c / (dx * dx);
                        r[1] = -c / (dx * dx);
                        r[n - 1] = -c / (dx * dx);
                        r
                    }
                };
                let mut m = DMatrix::<f64>::from_fn(n, n, |j, l| row[(j + n - l) % n]);
                for j in 0..n {
                    m[(j, j)] += potential[j];
                }
                Ok(m)
            }
            _ => Err(QgridError::Config(format!("{} has no dense matrix form", self.label))),
        }
    }

    /// Eigenvalues in basis order: grid order for diagonal operators, FFT
    /// order for momentum, ascending for dense spectra.
    pub fn eigenvalues(&self) -> Result<Vec<f64>, QgridError> {
        match &self.repr {
            Repr::Diagonal(d) => Ok(d.clone()),
            Repr::Momentum => {
                Ok(fft::wavenumbers(self.grid.len(), self.grid.dx()).into_iter().map(|k| self.units.hbar * k).collect())
            }
            Repr::Hamiltonian { .. } | Repr::Dense(_) => Ok(self.dense_spectrum()?.values.clone()),
        }
    }

    pub fn basis_size(&self) -> Result<usize, QgridError> {
        match &self.repr {
            Repr::Diagonal(_) | Repr::Momentum => Ok(self.grid.len()),
            _ => Ok(self.dense_spectrum()?.values.len()),
        }
    }

    /// Expansion coefficients `<s_i|psi>` over the (possibly truncated) basis.
    pub fn coefficients(&self, psi: &[C64]) -> Result<Vec<C64>, QgridError> {
        let n = self.grid.len();
        if psi.len() != n {
            return Err(QgridError::Dimension(format!("{} amplitudes for {n} points", psi.len())));
        }
        let dx = self.grid.dx();
        match &self.repr {
            Repr::Diagonal(_) => Ok(psi.iter().map(|z| z * dx.sqrt()).collect()),
            Repr::Momentum => {
                let mut buf = psi.to_vec();
                fft::forward(&mut buf);
                let pref = dx / self.grid.length().sqrt();
                let x0 = self.grid.x_min();
                Ok(buf
                    .into_iter()
                    .zip(fft::wavenumbers(n, dx))
                    .map(|(z, k)| z * C64::from_polar(pref, -k * x0))
                    .collect())
            }
            _ => {
                let spec = self.dense_spectrum()?;
                let s = dx.sqrt();
                let v = nalgebra::DVector::from_iterator(n, psi.iter().map(|z| z * s));
                Ok(spec.vectors.ad_mul(&v).iter().copied().collect())
            }
        }
    }

    /// Grid amplitudes of `sum_i coeffs[i] |s_i>`.
    pub fn synthesize(&self, coeffs: &[C64]) -> Result<Vec<C64>, QgridError> {
        let n = self.grid.len();
        let dx = self.grid.dx();
        match &self.repr {
            Repr::Diagonal(_) => {
                if coeffs.len() != n {
                    return Err(QgridError::Dimension("coefficient count".into()));
                }
                Ok(coeffs.iter().map(|c| c / dx.sqrt()).collect())
            }
            Repr::Momentum => {
                if coeffs.len() != n {
                    return Err(QgridError::Dimension("coefficient count".into()));
                }
                let x0 = self.grid.x_min();
                let pref = n as f64 / self.grid.length().sqrt();
                let mut buf: Vec<C64> = coeffs
                    .iter()
                    .zip(fft::wavenumbers(n, dx))
                    .map(|(c, k)| c * C64::from_polar(pref, k * x0))
                    .collect();
                fft::inverse(&mut buf);
                Ok(buf)
            }
            _ => {
                let spec = self.dense_spectrum()?;
                if coeffs.len() != spec.values.len() {
                    return Err(QgridError::Dimension("coefficient count".into()));
                }
                let c = nalgebra::DVector::from_column_slice(coeffs);
                let s = 1.0 / dx.sqrt();
                Ok((&spec.vectors * c).iter().map(|z| z * s).collect())
            }
        }
    }

    /// Eigenfunction `i` on the grid, unit L2 norm.
    pub fn eigenfunction(&self, i: usize) -> Result<Vec<C64>, QgridError> {
        let m = self.basis_size()?;
        if i >= m {
            return Err(QgridError::Dimension(format!("eigenfunction {i} of {m}")));
        }
        let mut c = vec![C64::new(0.0, 0.0); m];
        c[i] = C64::new(1.0, 0.0);
        self.synthesize(&c)
    }

    /// Application through the eigen-expansion `sum_i s_i |s_i><s_i|psi>`.
    pub fn apply_spectral(&self, psi: &[C64]) -> Result<Vec<C64>, QgridError> {
        let values = self.eigenvalues()?;
        let c = self.coefficients(psi)?;
        let scaled: Vec<C64> = c.iter().zip(&values).map(|(z, s)| z * s).collect();
        self.synthesize(&scaled)
    }
}

/// Hamiltonian `p^2/2m + V(x, t)` at time `t`.
pub fn build_hamiltonian(
    grid: &Grid1D,
    potential: &PotentialModel,
    t: f64,
    units: &Units,
    kinetic: Kinetic,
) -> Result<SpectralOperator, QgridError> {
    potential.validate(grid)?;
    let samples = potential.sample(grid, t, units)?;
    Ok(SpectralOperator::with_repr(
        OperatorLabel::Hamiltonian,
        *grid,
        *units,
        Repr::Hamiltonian { potential: samples, kinetic },
    ))
}

/// `<psi|S|psi>`; fails on mismatched grids or a non-negligible imaginary
/// residue.
pub fn expectation(op: &SpectralOperator, psi: &WaveFunction) -> Result<f64, QgridError> {
    let applied = op.apply_wave(psi)?;
    let z = super::wave::inner(psi.amplitudes(), &applied, psi.grid().dx());
    if z.im.abs() > 1e-8 * (1.0 + z.re.abs()) {
        return Err(QgridError::Numeric(format!("expectation of {} has imaginary residue {:e}", op.label(), z.im)));
    }
    Ok(z.re)
}

/// `sum_i s_i |<s_i|psi>|^2`.
pub fn expectation_spectral(op: &SpectralOperator, psi: &WaveFunction) -> Result<f64, QgridError> {
    op.grid().check_same(psi.grid())?;
    let values = op.eigenvalues()?;
    let c = op.coefficients(psi.amplitudes())?;
    Ok(c.iter().zip(&values).map(|(z, s)| z.norm_sqr() * s).sum())
}

//! Spatial grid, wavefunctions, Hamiltonians, propagation and spectral
//! decomposition of observables.

pub mod fft;
mod grid;
pub mod interp;
mod operator;
mod potential;
mod propagate;
mod wave;

pub use grid::Grid1D;
pub use interp::SpectralInterpolant;
pub use operator::{
    build_hamiltonian, expectation, expectation_spectral, DenseSpectrum, Kinetic, OperatorLabel, SpectralOperator,
    MAX_DENSE_POINTS,
};
pub use potential::{Envelope, PotentialModel};
pub use propagate::{
    propagate, propagate_frames, solve_cyclic_tridiagonal, Evolution, Method, PropagatorConfig, Stepper,
    NORM_DRIFT_LIMIT,
};
pub use wave::{
    inner as inner_product, integrate_window, polar_decompose, window_weights, PolarForm, Units, WaveFunction,
    NODE_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QgridError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unstable step dt = {dt}: {reason}")]
    StepSize { dt: f64, reason: String },
    #[error("numeric error: {0}")]
    Numeric(String),
}

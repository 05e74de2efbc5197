//! Cached FFT plans shared across threads.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

type Plans = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

fn plans(n: usize) -> Plans {
    static CACHE: OnceLock<Mutex<HashMap<usize, Plans>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
        })
        .clone()
}

/// Unnormalized forward transform, in place.
pub fn forward(data: &mut [C64]) {
    let (fwd, _) = plans(data.len());
    fwd.process(data);
}

/// Inverse transform including the 1/n factor, in place.
pub fn inverse(data: &mut [C64]) {
    let n = data.len();
    let (_, inv) = plans(n);
    inv.process(data);
    let scale = 1.0 / n as f64;
    data.iter_mut().for_each(|z| *z *= scale);
}

/// Angular wavenumbers in FFT order for `n` points of spacing `dx`.
pub fn wavenumbers(n: usize, dx: f64) -> Vec<f64> {
    let dk = 2.0 * std::f64::consts::PI / (n as f64 * dx);
    (0..n)
        .map(|m| {
            let m = m as i64;
            let signed = if m < (n as i64 + 1) / 2 { m } else { m - n as i64 };
            signed as f64 * dk
        })
        .collect()
}

/// Applies the multiplier `mult(k)` in Fourier space.
pub fn apply_multiplier(values: &[C64], dx: f64, mult: impl Fn(f64) -> C64) -> Vec<C64> {
    let mut buf = values.to_vec();
    forward(&mut buf);
    for (z, k) in buf.iter_mut().zip(wavenumbers(values.len(), dx)) {
        *z *= mult(k);
    }
    inverse(&mut buf);
    buf
}

/// Spectral first derivative of a periodic complex sample.
pub fn derivative(values: &[C64], dx: f64) -> Vec<C64> {
    let n = values.len();
    let nyquist = if n.is_multiple_of(2) { Some(n / 2) } else { None };
    let mut buf = values.to_vec();
    forward(&mut buf);
    for (m, (z, k)) in buf.iter_mut().zip(wavenumbers(n, dx)).enumerate() {
        // the Nyquist mode has no well-defined odd derivative
        if Some(m) == nyquist {
            *z = C64::new(0.0, 0.0);
        } else {
            *z *= C64::new(0.0, k);
        }
    }
    inverse(&mut buf);
    buf
}

/// Spectral second derivative of a periodic complex sample.
pub fn second_derivative(values: &[C64], dx: f64) -> Vec<C64> {
    apply_multiplier(values, dx, |k| C64::new(-k * k, 0.0))
}

/// Spectral second derivative of a real periodic sample.
pub fn second_derivative_real(values: &[f64], dx: f64) -> Vec<f64> {
    let c: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
    second_derivative(&c, dx).into_iter().map(|z| z.re).collect()
}

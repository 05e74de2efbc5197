//! Interpolation on a periodic grid: four-point Lagrange for speed and a
//! trigonometric interpolant that is exact for band-limited samples.

use std::ops::{Add, Mul};

use num_complex::Complex64 as C64;

use super::{fft, Grid1D};

/// Stencil indices and weights for cubic interpolation at `x`.
pub fn cubic_stencil(grid: &Grid1D, x: f64) -> ([usize; 4], [f64; 4]) {
    let n = grid.len() as i64;
    let s = (x - grid.x_min()) / grid.dx();
    let base = s.floor();
    let u = s - base;
    let base = base as i64;
    let idx = [
        (base - 1).rem_euclid(n) as usize,
        base.rem_euclid(n) as usize,
        (base + 1).rem_euclid(n) as usize,
        (base + 2).rem_euclid(n) as usize,
    ];
    let w = [
        -u * (u - 1.0) * (u - 2.0) / 6.0,
        (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0,
        -(u + 1.0) * u * (u - 2.0) / 2.0,
        (u + 1.0) * u * (u - 1.0) / 6.0,
    ];
    (idx, w)
}

pub fn cubic<T>(grid: &Grid1D, values: &[T], x: f64) -> T
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T>,
{
    let (idx, w) = cubic_stencil(grid, x);
    values[idx[0]] * w[0] + values[idx[1]] * w[1] + values[idx[2]] * w[2] + values[idx[3]] * w[3]
}

/// Trigonometric interpolant of periodic complex samples. The Nyquist mode
/// enters as a cosine so that real data interpolate to real values.
#[derive(Debug, Clone)]
pub struct SpectralInterpolant {
    x_min: f64,
    dk: f64,
    coeffs: Vec<C64>,
}

impl SpectralInterpolant {
    pub fn new(grid: &Grid1D, values: &[C64]) -> Self {
        let n = values.len();
        let mut coeffs = values.to_vec();
        fft::forward(&mut coeffs);
        coeffs.iter_mut().for_each(|c| *c /= n as f64);
        Self { x_min: grid.x_min(), dk: 2.0 * std::f64::consts::PI / grid.length(), coeffs }
    }

    fn eval(&self, x: f64, derivative: bool) -> C64 {
        let n = self.coeffs.len();
        let s = x - self.x_min;
        let w = C64::cis(self.dk * s);
        let half = n / 2;
        let mut acc = C64::new(0.0, 0.0);
        let mut up = C64::new(1.0, 0.0);
        // modes 0..ceil(n/2) are non-negative, the rest negative
        for m in 0..n.div_ceil(2) {
            let k = m as f64 * self.dk;
            let f = if derivative { C64::new(0.0, k) } else { C64::new(1.0, 0.0) };
            acc += self.coeffs[m] * f * up;
            up *= w;
        }
        let mut down = w.conj();
        for m in (n.div_ceil(2)..n).rev() {
            let signed = m as f64 - n as f64;
            if n.is_multiple_of(2) && m == half {
                if !derivative {
                    acc += self.coeffs[m] * C64::new((signed * self.dk * s).cos(), 0.0);
                }
            } else {
                let f = if derivative { C64::new(0.0, signed * self.dk) } else { C64::new(1.0, 0.0) };
                acc += self.coeffs[m] * f * down;
            }
            down *= w.conj();
        }
        acc
    }

    pub fn at(&self, x: f64) -> C64 {
        self.eval(x, false)
    }

    /// Derivative of the interpolant, with the Nyquist mode dropped as in
    /// [`fft::derivative`].
    pub fn derivative_at(&self, x: f64) -> C64 {
        self.eval(x, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_interpolant_is_exact_for_trig_polynomials() {
        let g = Grid1D::new(-3.0, 5.0, 32).unwrap();
        let k1 = 2.0 * std::f64::consts::PI * 3.0 / g.length();
        let k2 = -2.0 * std::f64::consts::PI * 5.0 / g.length();
        let f = |x: f64| C64::new(0.4, 0.1) * C64::cis(k1 * x) + C64::new(-1.0, 0.7) * C64::cis(k2 * x);
        let df = |x: f64| {
            C64::new(0.4, 0.1) * C64::new(0.0, k1) * C64::cis(k1 * x)
                + C64::new(-1.0, 0.7) * C64::new(0.0, k2) * C64::cis(k2 * x)
        };
        let vals: Vec<C64> = g.points().iter().map(|&x| f(x)).collect();
        let it = SpectralInterpolant::new(&g, &vals);
        for &x in &[-2.9, 0.123, 1.0, 4.77] {
            assert!((it.at(x) - f(x)).norm() < 1e-12);
            assert!((it.derivative_at(x) - df(x)).norm() < 1e-11);
        }
        let d = fft::derivative(&vals, g.dx());
        assert!((it.derivative_at(g.x(7)) - d[7]).norm() < 1e-11);
    }

    #[test]
    fn reproduces_cubics_and_grid_values() {
        let g = Grid1D::new(-4.0, 4.0, 64).unwrap();
        let f = |x: f64| 0.3 * x * x * x - x * x + 2.0;
        let vals: Vec<f64> = g.points().iter().map(|&x| f(x)).collect();
        for &x in &[-1.3, 0.0, 0.77, 2.01] {
            assert!((cubic(&g, &vals, x) - f(x)).abs() < 1e-10);
        }
        assert_eq!(cubic(&g, &vals, g.x(10)), vals[10]);
    }
}

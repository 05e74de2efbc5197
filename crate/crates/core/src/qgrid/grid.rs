use serde::{Deserialize, Serialize};

use super::QgridError;

/// Uniform periodic grid on `[x_min, x_max)`.
///
/// Point `j` sits at `x_min + j * dx` with `dx = (x_max - x_min) / n`; the
/// point `x_max` is identified with `x_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    x_min: f64,
    x_max: f64,
    n: usize,
}

impl Grid1D {
    pub const MIN_POINTS: usize = 16;

    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self, QgridError> {
        if n < Self::MIN_POINTS {
            return Err(QgridError::Config(format!("grid needs at least {} points, got {n}", Self::MIN_POINTS)));
        }
        if !(x_min.is_finite() && x_max.is_finite()) || x_max <= x_min {
            return Err(QgridError::Config(format!("grid bounds must satisfy x_min < x_max, got [{x_min}, {x_max}]")));
        }
        Ok(Self { x_min, x_max, n })
    }

    /// Symmetric grid `[-half_width, half_width)`.
    pub fn centered(half_width: f64, n: usize) -> Result<Self, QgridError> {
        Self::new(-half_width, half_width, n)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n as f64
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    /// Boundary convention; only periodic grids are supported.
    pub fn is_periodic(&self) -> bool {
        true
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x < self.x_max
    }

    /// Index of the grid point nearest to `x` (periodic wrap).
    pub fn nearest_index(&self, x: f64) -> usize {
        let s = ((x - self.x_min) / self.dx()).round() as i64;
        s.rem_euclid(self.n as i64) as usize
    }

    pub fn same_as(&self, other: &Grid1D) -> bool {
        self.n == other.n
            && (self.x_min - other.x_min).abs() <= 1e-12 * self.length()
            && (self.x_max - other.x_max).abs() <= 1e-12 * self.length()
    }

    pub fn check_same(&self, other: &Grid1D) -> Result<(), QgridError> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(QgridError::Dimension(format!(
                "grid [{}, {}) x {} does not match [{}, {}) x {}",
                self.x_min, self.x_max, self.n, other.x_min, other.x_max, other.n
            )))
        }
    }
}

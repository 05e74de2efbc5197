use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Grid1D, QgridError, Units};

/// Time profile of a uniform drive field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Envelope {
    /// Constant amplitude on `[t_on, t_off)`.
    #[default]
    Step,
    /// `sin^2` ramp up and down over `[t_on, t_off]`.
    SinSquared,
}

/// External scalar potential energy `V(x, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialModel {
    Free,
    Barrier {
        height: f64,
        left: f64,
        right: f64,
    },
    Harmonic {
        omega: f64,
        #[serde(default)]
        center: f64,
    },
    /// Uniform field `E(t)`, potential energy `-q E(t) x`.
    Drive {
        amplitude: f64,
        t_on: f64,
        t_off: f64,
        #[serde(default)]
        envelope: Envelope,
    },
    Sum {
        terms: Vec<PotentialModel>,
    },
}

impl PotentialModel {
    pub fn is_free(&self) -> bool {
        match self {
            PotentialModel::Free => true,
            PotentialModel::Sum { terms } => terms.iter().all(|t| t.is_free()),
            _ => false,
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        match self {
            PotentialModel::Drive { .. } => true,
            PotentialModel::Sum { terms } => terms.iter().any(|t| t.is_time_dependent()),
            _ => false,
        }
    }

    /// Drive field `E(t)` (zero for static potentials).
    pub fn field(&self, t: f64) -> f64 {
        match self {
            PotentialModel::Drive { amplitude, t_on, t_off, envelope } => {
                if t < *t_on || t >= *t_off {
                    return 0.0;
                }
                match envelope {
                    Envelope::Step => *amplitude,
                    Envelope::SinSquared => {
                        let s = (PI * (t - t_on) / (t_off - t_on)).sin();
                        amplitude * s * s
                    }
                }
            }
            PotentialModel::Sum { terms } => terms.iter().map(|p| p.field(t)).sum(),
            _ => 0.0,
        }
    }

    pub fn value(&self, x: f64, t: f64, units: &Units) -> f64 {
        match self {
            PotentialModel::Free => 0.0,
            PotentialModel::Barrier { height, left, right } => {
                if x >= *left && x < *right {
                    *height
                } else {
                    0.0
                }
            }
            PotentialModel::Harmonic { omega, center } => {
                0.5 * units.mass * omega * omega * (x - center) * (x - center)
            }
            PotentialModel::Drive { .. } => -units.charge * self.field(t) * x,
            PotentialModel::Sum { terms } => terms.iter().map(|p| p.value(x, t, units)).sum(),
        }
    }

    /// Force `-dV/dx` away from barrier edges, where it is singular and
    /// reported as zero.
    pub fn force(&self, x: f64, t: f64, units: &Units) -> f64 {
        match self {
            PotentialModel::Free | PotentialModel::Barrier { .. } => 0.0,
            PotentialModel::Harmonic { omega, center } => -units.mass * omega * omega * (x - center),
            PotentialModel::Drive { .. } => units.charge * self.field(t),
            PotentialModel::Sum { terms } => terms.iter().map(|p| p.force(x, t, units)).sum(),
        }
    }

    pub fn sample(&self, grid: &Grid1D, t: f64, units: &Units) -> Result<Vec<f64>, QgridError> {
        let v: Vec<f64> = grid.points().into_iter().map(|x| self.value(x, t, units)).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(QgridError::Config(format!("potential is not finite at t = {t}")));
        }
        Ok(v)
    }

    /// Checks parameters and that barriers are resolved by the grid.
    pub fn validate(&self, grid: &Grid1D) -> Result<(), QgridError> {
        match self {
            PotentialModel::Free => Ok(()),
            PotentialModel::Barrier { height, left, right } => {
                if !height.is_finite() || !(right > left) {
                    return Err(QgridError::Config(format!(
                        "barrier needs finite height and left < right, got [{left}, {right}]"
                    )));
                }
                let points = grid.points().into_iter().filter(|x| x >= left && x < right).count();
                if points < 4 {
                    return Err(QgridError::Config(format!(
                        "barrier [{left}, {right}) spans only {points} grid points, need at least 4"
                    )));
                }
                Ok(())
            }
            PotentialModel::Harmonic { omega, .. } => {
                if *omega > 0.0 {
                    Ok(())
                } else {
                    Err(QgridError::Config(format!("harmonic omega must be positive, got {omega}")))
                }
            }
            PotentialModel::Drive { amplitude, t_on, t_off, .. } => {
                if amplitude.is_finite() && t_off > t_on {
                    Ok(())
                } else {
                    Err(QgridError::Config(format!(
                        "drive needs finite amplitude and t_on < t_off, got [{t_on}, {t_off})"
                    )))
                }
            }
            PotentialModel::Sum { terms } => terms.iter().try_for_each(|p| p.validate(grid)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barrier_resolution_is_checked() {
        let g = Grid1D::centered(10.0, 64).unwrap();
        let narrow = PotentialModel::Barrier { height: 1.0, left: 0.0, right: 0.5 };
        assert!(narrow.validate(&g).is_err());
        let wide = PotentialModel::Barrier { height: 1.0, left: 0.0, right: 2.0 };
        assert!(wide.validate(&g).is_ok());
    }

    #[test]
    fn drive_envelopes() {
        let step = PotentialModel::Drive { amplitude: 2.0, t_on: 1.0, t_off: 3.0, envelope: Envelope::Step };
        assert_eq!(step.field(0.5), 0.0);
        assert_eq!(step.field(2.0), 2.0);
        let smooth = PotentialModel::Drive { amplitude: 2.0, t_on: 1.0, t_off: 3.0, envelope: Envelope::SinSquared };
        assert!((smooth.field(2.0) - 2.0).abs() < 1e-12);
        assert!(smooth.field(1.0).abs() < 1e-12);
        let u = Units::default();
        assert!((step.value(1.5, 2.0, &u) + 3.0).abs() < 1e-12);
        assert_eq!(step.force(1.5, 2.0, &u), 2.0);
    }
}

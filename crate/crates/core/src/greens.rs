//! Free-space 2D Green's function and line-source incident fields.
//!
//! Time convention is `e^{+jωt}`. The outgoing Green's function of
//! `(∇² + k0²) g = −δ` is then `g(ρ) = (−j/4)·H0^(2)(k0·ρ)`, and the total
//! field obeys `E = E_i + k0² ∫ g·χ·E dA` with `χ = ε_r − 1`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::physics::PhysicsConfig;
use crate::special::hankel2_0;

/// Points closer than this are treated as coincident.
pub const COINCIDENT_TOL: f64 = 1e-12;

/// Complex field samples, one per requested point.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldGrid {
    pub values: Vec<Complex64>,
}

impl FieldGrid {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// `g` as a function of distance; `rho` must be positive.
pub fn green_at(rho: f64, k: f64) -> Complex64 {
    Complex64::new(0.0, -0.25) * hankel2_0(k * rho)
}

pub fn greens_2d(a: Point, b: Point, cfg: &PhysicsConfig) -> Result<Complex64> {
    let rho = a.dist(&b);
    if rho < COINCIDENT_TOL {
        return Err(Error::Singularity(format!(
            "Green's function evaluated at coincident points ({}, {})",
            a.x, a.y
        )));
    }
    Ok(green_at(rho, cfg.wavenumber()))
}

/// Field of a unit line source at `tx`: `E_i(r) = g(r, r_tx)`.
pub fn incident_field(tx: Point, points: &[Point], cfg: &PhysicsConfig) -> Result<FieldGrid> {
    let values = points
        .iter()
        .map(|p| greens_2d(*p, tx, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(FieldGrid { values })
}

//! Closed-form reference pairs `(r, U)` used as manufactured solutions and
//! as strong solutions in the relative-energy experiments.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::mesh::Grid;

/// A smooth density/velocity pair on a 1D domain with analytic derivatives.
///
/// Second space derivatives are optional; when absent, callers fall back to
/// fourth-order central differences of the first derivatives.
pub trait ReferenceSolution: Send + Sync {
    fn density(&self, t: f64, x: f64) -> f64;
    fn density_t(&self, t: f64, x: f64) -> f64;
    fn density_x(&self, t: f64, x: f64) -> f64;
    fn density_xx(&self, _t: f64, _x: f64) -> Option<f64> {
        None
    }

    fn velocity(&self, t: f64, x: f64) -> f64;
    fn velocity_t(&self, t: f64, x: f64) -> f64;
    fn velocity_x(&self, t: f64, x: f64) -> f64;
    fn velocity_xx(&self, _t: f64, _x: f64) -> Option<f64> {
        None
    }

    fn name(&self) -> &str;
}

const FD_STEP: f64 = 1e-3;

/// Round-off allowance for the no-slip check.
const WALL_TOL: f64 = 1e-12;

fn fourth_order_derivative(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = FD_STEP;
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// `r_xx`, analytic when available.
pub fn density_xx(reference: &dyn ReferenceSolution, t: f64, x: f64) -> f64 {
    reference
        .density_xx(t, x)
        .unwrap_or_else(|| fourth_order_derivative(|y| reference.density_x(t, y), x))
}

/// `U_xx`, analytic when available.
pub fn velocity_xx(reference: &dyn ReferenceSolution, t: f64, x: f64) -> f64 {
    reference
        .velocity_xx(t, x)
        .unwrap_or_else(|| fourth_order_derivative(|y| reference.velocity_x(t, y), x))
}

/// Checks the reference class on the space-time lattice spanned by the grid
/// centres/faces and `times`: `inf r > 0`, `U = 0` on the walls, finite
/// derivatives.
pub fn check_reference(reference: &dyn ReferenceSolution, grid: &Grid, times: &[f64]) -> Result<f64> {
    let xs = grid.centers(0);
    let faces = grid.face_positions(0);
    let mut inf_r = f64::INFINITY;
    for &t in times {
        for &x in &xs {
            let r = reference.density(t, x);
            let derivs = [
                reference.density_t(t, x),
                reference.density_x(t, x),
                density_xx(reference, t, x),
            ];
            if !r.is_finite() || derivs.iter().any(|d| !d.is_finite()) {
                return Err(Error::Precondition(format!(
                    "reference {} not differentiable at t = {t}, x = {x}",
                    reference.name()
                )));
            }
            inf_r = inf_r.min(r);
        }
        for &x in &faces {
            let derivs = [
                reference.velocity(t, x),
                reference.velocity_t(t, x),
                reference.velocity_x(t, x),
                velocity_xx(reference, t, x),
            ];
            if derivs.iter().any(|d| !d.is_finite()) {
                return Err(Error::Precondition(format!(
                    "reference {} velocity not differentiable at t = {t}, x = {x}",
                    reference.name()
                )));
            }
        }
        if grid.bc == crate::mesh::Boundary::NoSlip {
            let walls = [0.0, grid.extent[0]];
            for x in walls {
                let u = reference.velocity(t, x);
                if u.abs() > WALL_TOL {
                    return Err(Error::Precondition(format!(
                        "reference velocity {u:e} on the wall x = {x} at t = {t}"
                    )));
                }
            }
        }
    }
    if !(inf_r > 0.0) {
        return Err(Error::Precondition(format!(
            "reference density must stay positive, inf r = {inf_r}"
        )));
    }
    Ok(inf_r)
}

/// Fluid at rest with constant density.
#[derive(Debug, Clone, Copy)]
pub struct RestState {
    pub density: f64,
}

impl ReferenceSolution for RestState {
    fn density(&self, _t: f64, _x: f64) -> f64 {
        self.density
    }
    fn density_t(&self, _t: f64, _x: f64) -> f64 {
        0.0
    }
    fn density_x(&self, _t: f64, _x: f64) -> f64 {
        0.0
    }
    fn density_xx(&self, _t: f64, _x: f64) -> Option<f64> {
        Some(0.0)
    }
    fn velocity(&self, _t: f64, _x: f64) -> f64 {
        0.0
    }
    fn velocity_t(&self, _t: f64, _x: f64) -> f64 {
        0.0
    }
    fn velocity_x(&self, _t: f64, _x: f64) -> f64 {
        0.0
    }
    fn velocity_xx(&self, _t: f64, _x: f64) -> Option<f64> {
        Some(0.0)
    }
    fn name(&self) -> &str {
        "rest"
    }
}

/// `r = 2 + sin(2 pi (x - t)) / 2`, `U = sin(pi x)^2 sin(2 pi t)` on the unit
/// interval. `inf r = 1.5` and `U` vanishes on both walls.
#[derive(Debug, Clone, Copy, Default)]
pub struct TravellingWave;

impl ReferenceSolution for TravellingWave {
    fn density(&self, t: f64, x: f64) -> f64 {
        2.0 + 0.5 * (2.0 * PI * (x - t)).sin()
    }
    fn density_t(&self, t: f64, x: f64) -> f64 {
        -PI * (2.0 * PI * (x - t)).cos()
    }
    fn density_x(&self, t: f64, x: f64) -> f64 {
        PI * (2.0 * PI * (x - t)).cos()
    }
    fn density_xx(&self, t: f64, x: f64) -> Option<f64> {
        Some(-2.0 * PI * PI * (2.0 * PI * (x - t)).sin())
    }
    fn velocity(&self, t: f64, x: f64) -> f64 {
        let s = (PI * x).sin();
        s * s * (2.0 * PI * t).sin()
    }
    fn velocity_t(&self, t: f64, x: f64) -> f64 {
        let s = (PI * x).sin();
        s * s * 2.0 * PI * (2.0 * PI * t).cos()
    }
    fn velocity_x(&self, t: f64, x: f64) -> f64 {
        PI * (2.0 * PI * x).sin() * (2.0 * PI * t).sin()
    }
    fn velocity_xx(&self, t: f64, x: f64) -> Option<f64> {
        Some(2.0 * PI * PI * (2.0 * PI * x).cos() * (2.0 * PI * t).sin())
    }
    fn name(&self) -> &str {
        "travelling-wave"
    }
}

//! Explicit time integration of the Navier-Stokes, Brenner and
//! artificial-pressure models on a 1D staggered grid.
//!
//! The conserved pair `(rho, m)` is advanced with the two-stage SSP
//! Runge-Kutta scheme (Heun). `m` lives on faces and the velocity is
//! recovered as `u = m / rho_f` with `rho_f` the arithmetic mean of the two
//! neighbouring cells. Mass is transported with the upwind flux, momentum with
//! the upwind cell flux `F_c u_up`. Steps that would produce a non-positive
//! density are rejected and retried with half the step.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{self, Boundary, Grid};
use crate::pressure::PressureLaw;
use crate::reference::{self, ReferenceSolution};

/// Smallest admissible time step.
pub const MIN_DT: f64 = 1e-12;

/// Maximum number of step halvings before a positivity failure.
pub const MAX_REJECTIONS: usize = 20;

/// Coefficients of the regularized model.
///
/// `k = 0, delta = 0` is the barotropic Navier-Stokes system, `k > 0` adds
/// Brenner's mass diffusion and the compensating momentum flux, `delta > 0`
/// adds the artificial pressure `delta rho^big_gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub mu: f64,
    pub eta: f64,
    pub k: f64,
    pub delta: f64,
    pub big_gamma: f64,
    pub law: PressureLaw,
}

impl ModelParams {
    pub fn navier_stokes(mu: f64, eta: f64, law: PressureLaw) -> Self {
        Self {
            mu,
            eta,
            k: 0.0,
            delta: 0.0,
            big_gamma: 2.0,
            law,
        }
    }

    pub fn brenner(mu: f64, eta: f64, k: f64, law: PressureLaw) -> Self {
        Self {
            k,
            ..Self::navier_stokes(mu, eta, law)
        }
    }

    pub fn with_k(&self, k: f64) -> Self {
        Self { k, ..self.clone() }
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        Self {
            delta,
            ..self.clone()
        }
    }

    /// Every violated precondition, in declaration order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            v.push(format!(
                "mu = {} violates mu > 0 required by the Newtonian stress",
                self.mu
            ));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            v.push(format!("eta = {} violates eta >= 0", self.eta));
        }
        if !(self.k >= 0.0 && self.k.is_finite()) {
            v.push(format!("K = {} violates K >= 0", self.k));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            v.push(format!("delta = {} violates delta >= 0", self.delta));
        }
        if self.delta > 0.0 && !(self.big_gamma > 1.0) {
            v.push(format!(
                "Gamma = {} violates Gamma > 1 (required when delta > 0)",
                self.big_gamma
            ));
        }
        if let crate::pressure::PressureMode::PowerLaw = self.law.mode {
            if !(self.law.a > 0.0) {
                v.push(format!("pressure a = {} violates a > 0", self.law.a));
            }
            if !(self.law.gamma >= 1.0) {
                v.push(format!("pressure gamma = {} violates gamma >= 1", self.law.gamma));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// `(4/3) mu + eta`, the 1D reduction of the Newtonian stress.
    #[inline]
    pub fn viscosity_1d(&self) -> f64 {
        mesh::stress_unchecked(&[[1.0]], self.mu, self.eta)[0][0]
    }

    /// `p(s) + delta s^Gamma`.
    #[inline]
    pub fn pressure(&self, s: f64) -> f64 {
        let p = self.law.p(s);
        if self.delta > 0.0 {
            p + self.delta * s.powf(self.big_gamma)
        } else {
            p
        }
    }

    #[inline]
    pub fn dpressure(&self, s: f64) -> f64 {
        let d = self.law.dp(s);
        if self.delta > 0.0 {
            d + self.delta * self.big_gamma * s.powf(self.big_gamma - 1.0)
        } else {
            d
        }
    }

    /// Potential of the total pressure: `P(s) + delta (s^Gamma - s) / (Gamma - 1)`.
    #[inline]
    pub fn potential(&self, s: f64) -> f64 {
        let p = self.law.potential(s);
        if self.delta > 0.0 {
            p + self.delta * (s.powf(self.big_gamma) - s) / (self.big_gamma - 1.0)
        } else {
            p
        }
    }

    #[inline]
    pub fn dpotential(&self, s: f64) -> f64 {
        let d = self.law.dpotential(s);
        if self.delta > 0.0 {
            d + self.delta * (self.big_gamma * s.powf(self.big_gamma - 1.0) - 1.0)
                / (self.big_gamma - 1.0)
        } else {
            d
        }
    }

    /// Secant `(P'(b) - P'(a)) / (b - a)`, i.e. the mean of `P''` over `[a, b]`.
    #[inline]
    pub fn secant_d2potential(&self, a: f64, b: f64) -> f64 {
        if (b - a).abs() <= 1e-10 * a.abs().max(b.abs()) {
            self.dpressure(0.5 * (a + b)) / (0.5 * (a + b))
        } else {
            (self.dpotential(b) - self.dpotential(a)) / (b - a)
        }
    }
}

/// Density on cells, velocity on faces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub rho: Vec<f64>,
    pub u: Vec<f64>,
    pub time: f64,
}

impl FlowState {
    pub fn new(rho: Vec<f64>, u: Vec<f64>, time: f64, grid: &Grid) -> Result<Self> {
        let s = Self { rho, u, time };
        s.check(grid)?;
        Ok(s)
    }

    pub fn uniform(grid: &Grid, rho: f64, u: f64) -> Self {
        let mut v = vec![u; grid.n_faces(0)];
        if grid.bc == Boundary::NoSlip {
            v[0] = 0.0;
            let n = v.len();
            v[n - 1] = 0.0;
        }
        Self {
            rho: vec![rho; grid.n_cells()],
            u: v,
            time: 0.0,
        }
    }

    /// Samples a reference pair at time `t`: density at cell centres,
    /// velocity at faces.
    pub fn sample(reference: &dyn ReferenceSolution, grid: &Grid, t: f64) -> Self {
        let rho = grid.centers(0).iter().map(|x| reference.density(t, *x)).collect();
        let mut u: Vec<f64> = grid
            .face_positions(0)
            .iter()
            .map(|x| reference.velocity(t, *x))
            .collect();
        if grid.bc == Boundary::NoSlip {
            let n = u.len();
            u[0] = 0.0;
            u[n - 1] = 0.0;
        }
        Self { rho, u, time: t }
    }

    /// Checks sizes, positivity and the no-slip condition.
    pub fn check(&self, grid: &Grid) -> Result<()> {
        if grid.dim != 1 {
            return Err(Error::Config("the time integrator runs on 1D grids".into()));
        }
        if self.rho.len() != grid.n_cells() {
            return Err(Error::SizeMismatch {
                expected: grid.n_cells(),
                got: self.rho.len(),
            });
        }
        if self.u.len() != grid.n_faces(0) {
            return Err(Error::SizeMismatch {
                expected: grid.n_faces(0),
                got: self.u.len(),
            });
        }
        if let Some((i, r)) = self.rho.iter().enumerate().find(|(_, r)| !(**r > 0.0)) {
            return Err(Error::Domain(format!("density must be positive, cell {i} has {r}")));
        }
        if let Some((i, v)) = self.u.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "velocity",
                index: i,
                value: *v,
            });
        }
        if grid.bc == Boundary::NoSlip {
            let n = self.u.len();
            if self.u[0] != 0.0 || self.u[n - 1] != 0.0 {
                return Err(Error::Domain("no-slip wall velocity must be exactly 0".into()));
            }
        }
        Ok(())
    }

    pub fn mass(&self, grid: &Grid) -> f64 {
        self.rho.iter().sum::<f64>() * grid.dx()
    }

    /// `sum_f rho_f u_f dx` with arithmetic-mean face densities.
    pub fn momentum(&self, grid: &Grid) -> f64 {
        let rf = mesh::cells_to_faces_1d(&self.rho, grid);
        rf.iter().zip(&self.u).map(|(r, u)| r * u).sum::<f64>() * grid.dx()
    }
}

/// Source terms added to the continuity and momentum equations.
pub trait Forcing: Send + Sync {
    fn mass(&self, t: f64, x: f64) -> f64;
    fn momentum(&self, t: f64, x: f64) -> f64;
}

/// Residual of a model's equations evaluated on a reference pair; with it the
/// reference is an exact solution of the forced system.
pub struct ManufacturedForcing {
    reference: Arc<dyn ReferenceSolution>,
    params: ModelParams,
}

impl ManufacturedForcing {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn reference(&self) -> &Arc<dyn ReferenceSolution> {
        &self.reference
    }
}

impl Forcing for ManufacturedForcing {
    fn mass(&self, t: f64, x: f64) -> f64 {
        let r = self.reference.as_ref();
        let (rho, rt, rx) = (r.density(t, x), r.density_t(t, x), r.density_x(t, x));
        let (u, ux) = (r.velocity(t, x), r.velocity_x(t, x));
        let mut f = rt + rx * u + rho * ux;
        if self.params.k > 0.0 {
            f -= self.params.k * reference::density_xx(r, t, x);
        }
        f
    }

    fn momentum(&self, t: f64, x: f64) -> f64 {
        let r = self.reference.as_ref();
        let p = &self.params;
        let (rho, rt, rx) = (r.density(t, x), r.density_t(t, x), r.density_x(t, x));
        let (u, ut, ux) = (r.velocity(t, x), r.velocity_t(t, x), r.velocity_x(t, x));
        let uxx = reference::velocity_xx(r, t, x);
        let mut f = rt * u + rho * ut + rx * u * u + 2.0 * rho * u * ux + p.dpressure(rho) * rx
            - p.viscosity_1d() * uxx;
        if p.k > 0.0 {
            f -= p.k * (ux * rx + u * reference::density_xx(r, t, x));
        }
        f
    }
}

/// Builds the forcing that makes `reference` an exact solution of the model
/// described by `params`, after checking the reference on the grid for the
/// times in `[0, t_end]`.
pub fn manufactured_forcing(
    reference: Arc<dyn ReferenceSolution>,
    params: &ModelParams,
    grid: &Grid,
    t_end: f64,
) -> Result<ManufacturedForcing> {
    params.validate()?;
    let times: Vec<f64> = (0..=8).map(|k| t_end * k as f64 / 8.0).collect();
    reference::check_reference(reference.as_ref(), grid, &times)?;
    Ok(ManufacturedForcing {
        reference,
        params: params.clone(),
    })
}

/// Time derivatives of `rho` on cells and of `m = rho_f u` on faces.
#[derive(Debug, Clone, PartialEq)]
pub struct Tendencies {
    pub rho: Vec<f64>,
    pub momentum: Vec<f64>,
}

/// Semi-discrete right-hand side of the model.
pub fn rhs(
    state: &FlowState,
    params: &ModelParams,
    grid: &Grid,
    forcing: Option<&dyn Forcing>,
) -> Result<Tendencies> {
    state.check(grid)?;
    let t = tendencies(&state.rho, &state.u, state.time, params, grid, forcing);
    if let Some((i, v)) = t.rho.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "continuity tendency (cell)",
            index: i,
            value: *v,
        });
    }
    if let Some((i, v)) = t.momentum.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "momentum tendency (face)",
            index: i,
            value: *v,
        });
    }
    Ok(t)
}

fn tendencies(
    rho: &[f64],
    u: &[f64],
    time: f64,
    params: &ModelParams,
    grid: &Grid,
    forcing: Option<&dyn Forcing>,
) -> Tendencies {
    let n = grid.cells[0];
    let nf = grid.n_faces(0);
    let dx = grid.dx();
    let k = params.k;
    let nu = params.viscosity_1d();
    let periodic = grid.bc == Boundary::Periodic;

    // Face quantities: upwind mass flux, density gradient, Brenner flux u * rho_x.
    let mut mass_flux = vec![0.0; nf];
    let mut rho_x = vec![0.0; nf];
    for f in 0..nf {
        if grid.is_wall_face(f) {
            continue;
        }
        let (l, r) = grid.face_neighbors(f);
        let v = u[f];
        mass_flux[f] = v.max(0.0) * rho[l] + v.min(0.0) * rho[r];
        rho_x[f] = (rho[r] - rho[l]) / dx;
    }

    let mut d_rho = vec![0.0; n];
    // Cell quantities: momentum flux, viscous stress, Brenner flux, pressure.
    let mut cell_flux = vec![0.0; n];
    let mut stress = vec![0.0; n];
    let mut brenner = vec![0.0; n];
    let mut pressure = vec![0.0; n];
    for c in 0..n {
        let (l, r) = grid.cell_faces(c);
        d_rho[c] = -(mass_flux[r] - mass_flux[l]) / dx + k * (rho_x[r] - rho_x[l]) / dx;
        let fc = 0.5 * (mass_flux[l] + mass_flux[r]);
        let up = if fc > 0.0 { u[l] } else { u[r] };
        cell_flux[c] = fc * up;
        stress[c] = nu * (u[r] - u[l]) / dx;
        if k > 0.0 {
            brenner[c] = 0.5 * (u[l] * rho_x[l] + u[r] * rho_x[r]);
        }
        pressure[c] = params.pressure(rho[c]);
    }

    let mut d_m = vec![0.0; nf];
    for f in 0..nf {
        if grid.is_wall_face(f) {
            continue;
        }
        let (l, r) = grid.face_neighbors(f);
        d_m[f] = -(cell_flux[r] - cell_flux[l]) / dx - (pressure[r] - pressure[l]) / dx
            + (stress[r] - stress[l]) / dx
            + k * (brenner[r] - brenner[l]) / dx;
    }

    if let Some(src) = forcing {
        let h = dx;
        for (c, d) in d_rho.iter_mut().enumerate() {
            *d += src.mass(time, (c as f64 + 0.5) * h);
        }
        for (f, d) in d_m.iter_mut().enumerate() {
            if !grid.is_wall_face(f) {
                *d += src.momentum(time, f as f64 * h);
            }
        }
    }
    let _ = periodic;
    Tendencies {
        rho: d_rho,
        momentum: d_m,
    }
}

/// Instantaneous rates entering the energy balance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyRates {
    /// `int S(grad u):grad u`.
    pub viscous: f64,
    /// `K int P''(rho) |grad rho|^2` with the secant form of `P''`.
    pub brenner: f64,
    /// Power delivered by the forcing.
    pub work: f64,
}

pub fn energy_rates(
    rho: &[f64],
    u: &[f64],
    time: f64,
    params: &ModelParams,
    grid: &Grid,
    forcing: Option<&dyn Forcing>,
) -> EnergyRates {
    let n = grid.cells[0];
    let dx = grid.dx();
    let nu = params.viscosity_1d();
    let mut viscous = 0.0;
    for c in 0..n {
        let (l, r) = grid.cell_faces(c);
        let g = u[r] - u[l];
        viscous += nu * g * g / dx;
    }
    let mut brenner = 0.0;
    if params.k > 0.0 {
        for f in 0..grid.n_faces(0) {
            if grid.is_wall_face(f) {
                continue;
            }
            let (l, r) = grid.face_neighbors(f);
            let d = rho[r] - rho[l];
            brenner += params.secant_d2potential(rho[l], rho[r]) * d * d / dx;
        }
        brenner *= params.k;
    }
    let mut work = 0.0;
    if let Some(src) = forcing {
        for c in 0..n {
            let (l, r) = grid.cell_faces(c);
            let uc = 0.5 * (u[l] + u[r]);
            let x = (c as f64 + 0.5) * dx;
            work += (params.dpotential(rho[c]) - 0.5 * uc * uc) * src.mass(time, x);
        }
        for (f, v) in u.iter().enumerate() {
            if !grid.is_wall_face(f) {
                work += v * src.momentum(time, f as f64 * dx);
            }
        }
        work *= dx;
    }
    EnergyRates {
        viscous,
        brenner,
        work,
    }
}

/// Largest stable step: `safety * min(dx / (|u| + c), dx^2 / (2 nu), dx^2 / (2 K))`
/// with `c^2 = p'(rho)` and `nu = ((4/3) mu + eta) / min rho`.
pub fn cfl_dt(state: &FlowState, params: &ModelParams, grid: &Grid, safety: f64) -> Result<f64> {
    let dx = grid.dx();
    let umax = state.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cmax = state
        .rho
        .iter()
        .fold(0.0f64, |m, r| m.max(params.dpressure(*r).max(0.0).sqrt()));
    let rho_min = state.rho.iter().cloned().fold(f64::INFINITY, f64::min);
    let nu_max = params.viscosity_1d() / rho_min;
    let mut dt = f64::INFINITY;
    if umax + cmax > 0.0 {
        dt = dt.min(dx / (umax + cmax));
    }
    if nu_max > 0.0 {
        dt = dt.min(dx * dx / (2.0 * nu_max));
    }
    if params.k > 0.0 {
        dt = dt.min(dx * dx / (2.0 * params.k));
    }
    let dt = safety * dt;
    if !(dt >= MIN_DT) {
        return Err(Error::TimeStepUnderflow { dt });
    }
    Ok(dt)
}

/// An accepted step with the dissipation and work it accrued.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: FlowState,
    pub dt: f64,
    pub rejections: usize,
    pub viscous: f64,
    pub brenner: f64,
    pub work: f64,
}

fn momentum_from(rho: &[f64], u: &[f64], grid: &Grid) -> Vec<f64> {
    let rf = mesh::cells_to_faces_1d(rho, grid);
    rf.iter().zip(u).map(|(r, v)| r * v).collect()
}

fn velocity_from(rho: &[f64], m: &[f64], grid: &Grid) -> Vec<f64> {
    let rf = mesh::cells_to_faces_1d(rho, grid);
    let mut u: Vec<f64> = rf.iter().zip(m).map(|(r, v)| v / r).collect();
    if grid.bc == Boundary::NoSlip {
        let n = u.len();
        u[0] = 0.0;
        u[n - 1] = 0.0;
    }
    u
}

fn try_step(
    state: &FlowState,
    dt: f64,
    params: &ModelParams,
    grid: &Grid,
    forcing: Option<&dyn Forcing>,
) -> Option<(FlowState, EnergyRates, EnergyRates)> {
    let t0 = state.time;
    let m0 = momentum_from(&state.rho, &state.u, grid);
    let l0 = tendencies(&state.rho, &state.u, t0, params, grid, forcing);
    let rho1: Vec<f64> = state.rho.iter().zip(&l0.rho).map(|(r, d)| r + dt * d).collect();
    if rho1.iter().any(|r| !(*r > 0.0)) {
        return None;
    }
    let m1: Vec<f64> = m0.iter().zip(&l0.momentum).map(|(m, d)| m + dt * d).collect();
    let u1 = velocity_from(&rho1, &m1, grid);
    let l1 = tendencies(&rho1, &u1, t0 + dt, params, grid, forcing);
    let rho2: Vec<f64> = state
        .rho
        .iter()
        .zip(rho1.iter().zip(&l1.rho))
        .map(|(r0, (r1, d))| 0.5 * r0 + 0.5 * (r1 + dt * d))
        .collect();
    if rho2.iter().any(|r| !(*r > 0.0)) {
        return None;
    }
    let m2: Vec<f64> = m0
        .iter()
        .zip(m1.iter().zip(&l1.momentum))
        .map(|(a, (b, d))| 0.5 * a + 0.5 * (b + dt * d))
        .collect();
    let u2 = velocity_from(&rho2, &m2, grid);
    if u2.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let r0 = energy_rates(&state.rho, &state.u, t0, params, grid, forcing);
    let r1 = energy_rates(&rho1, &u1, t0 + dt, params, grid, forcing);
    Some((
        FlowState {
            rho: rho2,
            u: u2,
            time: t0 + dt,
        },
        r0,
        r1,
    ))
}

/// One SSP-RK2 step. The dissipation, Brenner and work integrals over the
/// step use the same stage weights as the update.
pub fn step(
    state: &FlowState,
    dt: f64,
    params: &ModelParams,
    grid: &Grid,
    forcing: Option<&dyn Forcing>,
) -> Result<StepOutcome> {
    state.check(grid)?;
    let mut h = dt;
    for rejections in 0..=MAX_REJECTIONS {
        if let Some((next, r0, r1)) = try_step(state, h, params, grid, forcing) {
            return Ok(StepOutcome {
                state: next,
                dt: h,
                rejections,
                viscous: 0.5 * h * (r0.viscous + r1.viscous),
                brenner: 0.5 * h * (r0.brenner + r1.brenner),
                work: 0.5 * h * (r0.work + r1.work),
            });
        }
        h *= 0.5;
    }
    Err(Error::Positivity {
        time: state.time,
        rejections: MAX_REJECTIONS,
        min_rho: state.rho.iter().cloned().fold(f64::INFINITY, f64::min),
        rho: state.rho.clone(),
        u: state.u.clone(),
    })
}

/// Everything needed to integrate one configuration.
#[derive(Clone)]
pub struct RunSpec {
    pub grid: Grid,
    pub params: ModelParams,
    pub initial: FlowState,
    pub t_end: f64,
    pub safety: f64,
    /// Requested snapshot times; `0` and `t_end` are always recorded.
    pub snapshots: Vec<f64>,
    pub forcing: Option<Arc<dyn Forcing>>,
}

/// Snapshots and accumulated integrals of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub cells: usize,
    pub extent: f64,
    pub bc: Boundary,
    pub params: ModelParams,
    pub times: Vec<f64>,
    pub states: Vec<FlowState>,
    /// Running `int_0^t int S(grad u):grad u`.
    pub dissipation: Vec<f64>,
    /// Running `K int_0^t int P''(rho)|grad rho|^2`.
    pub brenner: Vec<f64>,
    /// Running work of the forcing.
    pub work: Vec<f64>,
    pub mass: Vec<f64>,
    pub steps: usize,
    pub rejections: usize,
    pub forced: bool,
    pub failure: Option<String>,
}

impl TrajectoryRecord {
    pub fn grid(&self) -> Grid {
        Grid::new_1d(self.cells, self.extent, self.bc).expect("record holds a valid grid")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// A run that stopped early; the partial record is kept.
#[derive(Debug)]
pub struct RunFailure {
    pub partial: TrajectoryRecord,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run failed at t = {}: {}", self.partial.times.last().copied().unwrap_or(0.0), self.error)
    }
}

fn snapshot_schedule(requested: &[f64], t_end: f64) -> Vec<f64> {
    let mut times: Vec<f64> = requested
        .iter()
        .copied()
        .filter(|t| *t > 0.0 && *t < t_end)
        .collect();
    times.push(t_end);
    times.sort_by(f64::total_cmp);
    times.dedup();
    times.retain(|t| *t > 0.0);
    times
}

/// Integrates `spec` up to `t_end`. Snapshot times are hit exactly by
/// shortening the step that would overshoot them.
pub fn run(spec: &RunSpec) -> std::result::Result<TrajectoryRecord, RunFailure> {
    let grid = &spec.grid;
    let mut record = TrajectoryRecord {
        cells: grid.cells[0],
        extent: grid.extent[0],
        bc: grid.bc,
        params: spec.params.clone(),
        times: vec![],
        states: vec![],
        dissipation: vec![],
        brenner: vec![],
        work: vec![],
        mass: vec![],
        steps: 0,
        rejections: 0,
        forced: spec.forcing.is_some(),
        failure: None,
    };
    let fail = |mut record: TrajectoryRecord, error: Error| {
        record.failure = Some(error.to_string());
        RunFailure {
            partial: record,
            error,
        }
    };
    if let Err(e) = spec.params.validate().and_then(|_| spec.initial.check(grid)) {
        return Err(fail(record, e));
    }
    if !(spec.t_end >= 0.0) || !(spec.safety > 0.0 && spec.safety <= 1.0) {
        return Err(fail(
            record,
            Error::Config(format!(
                "need T >= 0 and 0 < safety <= 1, got T = {}, safety = {}",
                spec.t_end, spec.safety
            )),
        ));
    }

    let forcing = spec.forcing.as_deref();
    let mut state = spec.initial.clone();
    state.time = 0.0;
    let (mut diss, mut bren, mut work) = (0.0, 0.0, 0.0);
    let push = |record: &mut TrajectoryRecord, s: &FlowState, d: f64, b: f64, w: f64| {
        record.times.push(s.time);
        record.mass.push(s.mass(grid));
        record.states.push(s.clone());
        record.dissipation.push(d);
        record.brenner.push(b);
        record.work.push(w);
    };
    push(&mut record, &state, 0.0, 0.0, 0.0);
    if spec.t_end == 0.0 {
        return Ok(record);
    }

    let schedule = snapshot_schedule(&spec.snapshots, spec.t_end);
    let mut next = 0;
    let eps = 1e-12 * spec.t_end.max(1.0);
    while next < schedule.len() {
        let target = schedule[next];
        let mut dt = match cfl_dt(&state, &spec.params, grid, spec.safety) {
            Ok(dt) => dt,
            Err(e) => return Err(fail(record, e)),
        };
        let landing = state.time + dt >= target - eps;
        if landing {
            dt = target - state.time;
        }
        let outcome = match step(&state, dt, &spec.params, grid, forcing) {
            Ok(o) => o,
            Err(e) => return Err(fail(record, e)),
        };
        record.steps += 1;
        record.rejections += outcome.rejections;
        diss += outcome.viscous;
        bren += outcome.brenner;
        work += outcome.work;
        state = outcome.state;
        if landing && outcome.rejections == 0 {
            state.time = target;
        }
        if (state.time - target).abs() <= eps {
            state.time = target;
            push(&mut record, &state, diss, bren, work);
            next += 1;
        }
    }
    Ok(record)
}

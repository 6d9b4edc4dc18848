//! Audits of a trajectory: energy budget, a-priori bounds, weak-form
//! residuals, vanishing Brenner terms, renormalized continuity and the
//! discrete Poincaré constant.
//!
//! Space-time integrals use the snapshots of the record: cell/face sums in
//! space and the trapezoid rule between consecutive snapshots in time.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::loglog_slope;
use crate::mesh::{self, Boundary, Grid};
use crate::pressure::PressureLaw;
use crate::solver::{FlowState, Forcing, ModelParams, TrajectoryRecord};

/// `sum [rho |u_c|^2 / 2 + P(rho)] dx` with face-averaged cell velocities.
pub fn energy(state: &FlowState, law: &PressureLaw, grid: &Grid) -> f64 {
    let uc = mesh::faces_to_cells_1d(&state.u, grid);
    state
        .rho
        .iter()
        .zip(&uc)
        .map(|(r, u)| 0.5 * r * u * u + law.potential(*r))
        .sum::<f64>()
        * grid.dx()
}

/// Energy including the artificial-pressure potential.
pub fn model_energy(state: &FlowState, params: &ModelParams, grid: &Grid) -> f64 {
    let uc = mesh::faces_to_cells_1d(&state.u, grid);
    state
        .rho
        .iter()
        .zip(&uc)
        .map(|(r, u)| 0.5 * r * u * u + params.potential(*r))
        .sum::<f64>()
        * grid.dx()
}

/// Running trapezoid integral of `values` sampled at `times`.
pub fn cumulative_trapezoid(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        if i > 0 {
            acc += 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
        }
        out.push(acc);
    }
    out
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    cumulative_trapezoid(times, values).last().copied().unwrap_or(0.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyBudget {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    /// `E(t2) - E(t1) + dissipation + Brenner - work` per snapshot interval,
    /// indexed by the interval's right end.
    pub residuals: Vec<f64>,
    pub max_abs: f64,
    pub max_signed: f64,
}

/// Per-interval residuals of the energy balance. The work done by a forcing
/// enters with a minus sign so forced and unforced runs share one budget.
pub fn energy_budget(traj: &TrajectoryRecord) -> EnergyBudget {
    let grid = traj.grid();
    let energy: Vec<f64> = traj
        .states
        .iter()
        .map(|s| model_energy(s, &traj.params, &grid))
        .collect();
    let residuals: Vec<f64> = (1..traj.len())
        .map(|i| {
            energy[i] - energy[i - 1] + traj.dissipation[i] - traj.dissipation[i - 1]
                + traj.brenner[i]
                - traj.brenner[i - 1]
                - (traj.work[i] - traj.work[i - 1])
        })
        .collect();
    let max_abs = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let max_signed = residuals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    EnergyBudget {
        times: traj.times.clone(),
        energy,
        residuals,
        max_abs,
        max_signed,
    }
}

/// Energy lost by a trajectory beyond what its dissipation terms account for:
/// `E(0) + W(t) - E(t) - int S:grad u`. Contains the Brenner dissipation and
/// the numerical dissipation of the scheme.
pub fn energy_defect(traj: &TrajectoryRecord) -> Vec<f64> {
    let b = energy_budget(traj);
    (0..traj.len())
        .map(|i| b.energy[0] + traj.work[i] - b.energy[i] - traj.dissipation[i])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AprioriReport {
    /// `sup_t int P(rho)`.
    pub sup_potential: f64,
    /// `sup_t int rho |u|^2`.
    pub sup_kinetic: f64,
    /// `int int S(grad u):grad u`.
    pub dissipation: f64,
    /// `int int |grad u|^2`.
    pub grad_u_sq: f64,
    /// `int int |u|^2`.
    pub u_sq: f64,
    /// `K int int p'(rho)/rho |grad rho|^2`.
    pub brenner_weighted: f64,
}

impl AprioriReport {
    pub const NAMES: [&'static str; 6] = [
        "sup_potential",
        "sup_kinetic",
        "dissipation",
        "grad_u_sq",
        "u_sq",
        "brenner_weighted",
    ];

    pub fn entries(&self) -> [f64; 6] {
        [
            self.sup_potential,
            self.sup_kinetic,
            self.dissipation,
            self.grad_u_sq,
            self.u_sq,
            self.brenner_weighted,
        ]
    }
}

/// Per-snapshot integrands of the a-priori bounds.
struct SnapshotIntegrals {
    potential: f64,
    kinetic: f64,
    dissipation: f64,
    grad_u_sq: f64,
    u_sq: f64,
    brenner: f64,
}

fn snapshot_integrals(state: &FlowState, params: &ModelParams, grid: &Grid) -> SnapshotIntegrals {
    let dx = grid.dx();
    let uc = mesh::faces_to_cells_1d(&state.u, grid);
    let mut out = SnapshotIntegrals {
        potential: 0.0,
        kinetic: 0.0,
        dissipation: 0.0,
        grad_u_sq: 0.0,
        u_sq: 0.0,
        brenner: 0.0,
    };
    let nu = params.viscosity_1d();
    for c in 0..grid.cells[0] {
        let (l, r) = grid.cell_faces(c);
        let g = (state.u[r] - state.u[l]) / dx;
        out.potential += params.law.potential(state.rho[c]) * dx;
        out.kinetic += state.rho[c] * uc[c] * uc[c] * dx;
        out.dissipation += nu * g * g * dx;
        out.grad_u_sq += g * g * dx;
    }
    for (f, v) in state.u.iter().enumerate() {
        if !grid.is_wall_face(f) {
            out.u_sq += v * v * dx;
        }
    }
    if params.k > 0.0 {
        for f in 0..grid.n_faces(0) {
            if grid.is_wall_face(f) {
                continue;
            }
            let (l, r) = grid.face_neighbors(f);
            let rf = 0.5 * (state.rho[l] + state.rho[r]);
            let g = (state.rho[r] - state.rho[l]) / dx;
            out.brenner += params.law.dp(rf) / rf * g * g * dx;
        }
        out.brenner *= params.k;
    }
    out
}

/// The six quantities bounded by the energy balance, by composite quadrature
/// over the snapshots.
pub fn apriori_bounds(traj: &TrajectoryRecord) -> AprioriReport {
    let grid = traj.grid();
    let per: Vec<SnapshotIntegrals> = traj
        .states
        .iter()
        .map(|s| snapshot_integrals(s, &traj.params, &grid))
        .collect();
    let series = |f: fn(&SnapshotIntegrals) -> f64| per.iter().map(f).collect::<Vec<_>>();
    AprioriReport {
        sup_potential: per.iter().fold(0.0f64, |m, p| m.max(p.potential)),
        sup_kinetic: per.iter().fold(0.0f64, |m, p| m.max(p.kinetic)),
        dissipation: trapezoid(&traj.times, &series(|p| p.dissipation)),
        grad_u_sq: trapezoid(&traj.times, &series(|p| p.grad_u_sq)),
        u_sq: trapezoid(&traj.times, &series(|p| p.u_sq)),
        brenner_weighted: trapezoid(&traj.times, &series(|p| p.brenner)),
    }
}

/// Two-grid estimate of the time-quadrature error in each a-priori entry:
/// the entries recomputed on every other snapshot, differenced against the
/// full set. Time integrals use the Richardson factor 1/3 of the trapezoid
/// rule; the suprema report the raw difference. Zero with fewer than three
/// snapshots.
pub fn apriori_quadrature_error(traj: &TrajectoryRecord) -> [f64; 6] {
    let m = traj.len();
    if m < 3 {
        return [0.0; 6];
    }
    let mut keep: Vec<usize> = (0..m).step_by(2).collect();
    if keep.last() != Some(&(m - 1)) {
        keep.push(m - 1);
    }
    let mut coarse = traj.clone();
    coarse.times = keep.iter().map(|&i| traj.times[i]).collect();
    coarse.states = keep.iter().map(|&i| traj.states[i].clone()).collect();
    let fine = apriori_bounds(traj).entries();
    let coarse = apriori_bounds(&coarse).entries();
    std::array::from_fn(|j| {
        let d = (fine[j] - coarse[j]).abs();
        if j < 2 { d } else { d / 3.0 }
    })
}

/// `c_P int int |grad u|^2 - int int |u|^2` for one trajectory.
pub fn poincare_margin(traj: &TrajectoryRecord, c_p: f64) -> f64 {
    let r = apriori_bounds(traj);
    c_p * r.grad_u_sq - r.u_sq
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFunctionKind {
    TensorTrig,
    PolynomialBubble,
}

/// A space-time test function on `[0, extent]` with time factor `1/(1+t)`.
///
/// Scalar members: `cos(k pi x/L)` (trig) or `(x/L)^k` (bubble). Vector
/// members vanish on the walls: `sin(k pi x/L)` or `(x/L)^k (1 - x/L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestFunction {
    pub kind: TestFunctionKind,
    pub index: u32,
    pub vector: bool,
    pub extent: f64,
    /// Multiplier; used to form linear combinations in tests.
    pub scale: f64,
}

impl TestFunction {
    pub fn id(&self) -> String {
        let kind = match self.kind {
            TestFunctionKind::TensorTrig => "trig",
            TestFunctionKind::PolynomialBubble => "bubble",
        };
        let var = if self.vector { "phi" } else { "psi" };
        format!("{var}-{kind}-{}", self.index)
    }

    fn time(t: f64) -> (f64, f64) {
        let g = 1.0 / (1.0 + t);
        (g, -g * g)
    }

    fn space(&self, x: f64) -> (f64, f64) {
        let l = self.extent;
        let k = self.index as f64;
        let xi = x / l;
        match (self.kind, self.vector) {
            (TestFunctionKind::TensorTrig, false) => {
                let a = k * std::f64::consts::PI / l;
                ((a * x).cos(), -a * (a * x).sin())
            }
            (TestFunctionKind::TensorTrig, true) => {
                let a = k * std::f64::consts::PI / l;
                ((a * x).sin(), a * (a * x).cos())
            }
            (TestFunctionKind::PolynomialBubble, false) => {
                (xi.powi(self.index as i32), k * xi.powi(self.index as i32 - 1) / l)
            }
            (TestFunctionKind::PolynomialBubble, true) => {
                let n = self.index as i32;
                (
                    xi.powi(n) * (1.0 - xi),
                    (k * xi.powi(n - 1) - (k + 1.0) * xi.powi(n)) / l,
                )
            }
        }
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.scale * Self::time(t).0 * self.space(x).0
    }

    pub fn dt(&self, t: f64, x: f64) -> f64 {
        self.scale * Self::time(t).1 * self.space(x).0
    }

    pub fn dx(&self, t: f64, x: f64) -> f64 {
        self.scale * Self::time(t).0 * self.space(x).1
    }

    /// `sup|f| + sup|f_t| + sup|f_x|` over `t >= 0` and the domain.
    pub fn c1_norm(&self) -> f64 {
        let l = self.extent;
        let k = self.index as f64;
        let (sup, sup_x) = match (self.kind, self.vector) {
            (TestFunctionKind::TensorTrig, _) => (1.0, k * std::f64::consts::PI / l),
            (TestFunctionKind::PolynomialBubble, false) => (1.0, k / l),
            (TestFunctionKind::PolynomialBubble, true) => {
                (k.powf(k) / (k + 1.0).powf(k + 1.0), 1.0 / l)
            }
        };
        self.scale.abs() * (2.0 * sup + sup_x)
    }
}

/// Scalar and vector members of one kind with indices `1..=max_index`.
#[derive(Debug, Clone, Serialize)]
pub struct TestFunctionFamily {
    pub kind: TestFunctionKind,
    pub max_index: u32,
    pub extent: f64,
}

impl TestFunctionFamily {
    pub fn new(kind: TestFunctionKind, max_index: u32, extent: f64) -> Self {
        Self {
            kind,
            max_index,
            extent,
        }
    }

    pub fn scalars(&self) -> Vec<TestFunction> {
        self.members(false)
    }

    pub fn vectors(&self) -> Vec<TestFunction> {
        self.members(true)
    }

    fn members(&self, vector: bool) -> Vec<TestFunction> {
        (1..=self.max_index)
            .map(|index| TestFunction {
                kind: self.kind,
                index,
                vector,
                extent: self.extent,
                scale: 1.0,
            })
            .collect()
    }
}

/// A test function usable by the weak-form audits.
pub trait WeakTest {
    fn value(&self, t: f64, x: f64) -> f64;
    fn dt(&self, t: f64, x: f64) -> f64;
    fn dx(&self, t: f64, x: f64) -> f64;
}

impl WeakTest for TestFunction {
    fn value(&self, t: f64, x: f64) -> f64 {
        TestFunction::value(self, t, x)
    }
    fn dt(&self, t: f64, x: f64) -> f64 {
        TestFunction::dt(self, t, x)
    }
    fn dx(&self, t: f64, x: f64) -> f64 {
        TestFunction::dx(self, t, x)
    }
}

/// Sum of two test functions.
pub struct Sum<'a>(pub &'a dyn WeakTest, pub &'a dyn WeakTest);

impl WeakTest for Sum<'_> {
    fn value(&self, t: f64, x: f64) -> f64 {
        self.0.value(t, x) + self.1.value(t, x)
    }
    fn dt(&self, t: f64, x: f64) -> f64 {
        self.0.dt(t, x) + self.1.dt(t, x)
    }
    fn dx(&self, t: f64, x: f64) -> f64 {
        self.0.dx(t, x) + self.1.dx(t, x)
    }
}

/// Constant test function.
pub struct Constant(pub f64);

impl WeakTest for Constant {
    fn value(&self, _t: f64, _x: f64) -> f64 {
        self.0
    }
    fn dt(&self, _t: f64, _x: f64) -> f64 {
        0.0
    }
    fn dx(&self, _t: f64, _x: f64) -> f64 {
        0.0
    }
}

fn continuity_integrand(
    state: &FlowState,
    params: &ModelParams,
    grid: &Grid,
    psi: &dyn WeakTest,
    forcing: Option<&dyn Forcing>,
) -> f64 {
    let t = state.time;
    let dx = grid.dx();
    let xs = grid.centers(0);
    let xf = grid.face_positions(0);
    let mut acc = 0.0;
    for (c, x) in xs.iter().enumerate() {
        acc += state.rho[c] * psi.dt(t, *x);
        if let Some(f) = forcing {
            acc += f.mass(t, *x) * psi.value(t, *x);
        }
    }
    for f in 0..grid.n_faces(0) {
        if grid.is_wall_face(f) {
            continue;
        }
        let (l, r) = grid.face_neighbors(f);
        let rf = 0.5 * (state.rho[l] + state.rho[r]);
        let gx = psi.dx(t, xf[f]);
        acc += rf * state.u[f] * gx - params.k * (state.rho[r] - state.rho[l]) / dx * gx;
    }
    acc * dx
}

fn density_moment(state: &FlowState, grid: &Grid, psi: &dyn WeakTest) -> f64 {
    grid.centers(0)
        .iter()
        .zip(&state.rho)
        .map(|(x, r)| r * psi.value(state.time, *x))
        .sum::<f64>()
        * grid.dx()
}

/// Residual of the weak continuity equation at every snapshot:
/// `[int rho psi]_0^tau - int_0^tau int (rho psi_t + rho u psi_x - K rho_x psi_x + f psi)`.
pub fn weak_residual_continuity_series(
    traj: &TrajectoryRecord,
    psi: &dyn WeakTest,
    forcing: Option<&dyn Forcing>,
) -> Vec<f64> {
    let grid = traj.grid();
    let integrand: Vec<f64> = traj
        .states
        .iter()
        .map(|s| continuity_integrand(s, &traj.params, &grid, psi, forcing))
        .collect();
    let running = cumulative_trapezoid(&traj.times, &integrand);
    let m0 = density_moment(&traj.states[0], &grid, psi);
    traj.states
        .iter()
        .zip(&running)
        .map(|(s, i)| density_moment(s, &grid, psi) - m0 - i)
        .collect()
}

/// Residual of the weak continuity equation at the final snapshot.
pub fn weak_residual_continuity(
    traj: &TrajectoryRecord,
    psi: &dyn WeakTest,
    forcing: Option<&dyn Forcing>,
) -> f64 {
    *weak_residual_continuity_series(traj, psi, forcing)
        .last()
        .expect("trajectory has at least one snapshot")
}

fn momentum_integrand(
    state: &FlowState,
    params: &ModelParams,
    grid: &Grid,
    phi: &dyn WeakTest,
    forcing: Option<&dyn Forcing>,
) -> f64 {
    let t = state.time;
    let dx = grid.dx();
    let nu = params.viscosity_1d();
    let xs = grid.centers(0);
    let xf = grid.face_positions(0);
    let rf = mesh::cells_to_faces_1d(&state.rho, grid);
    let mut acc = 0.0;
    for f in 0..grid.n_faces(0) {
        if grid.is_wall_face(f) {
            continue;
        }
        acc += rf[f] * state.u[f] * phi.dt(t, xf[f]);
        if let Some(src) = forcing {
            acc += src.momentum(t, xf[f]) * phi.value(t, xf[f]);
        }
    }
    let rho_x = |f: usize| {
        if grid.is_wall_face(f) {
            0.0
        } else {
            let (l, r) = grid.face_neighbors(f);
            (state.rho[r] - state.rho[l]) / dx
        }
    };
    for (c, x) in xs.iter().enumerate() {
        let (l, r) = grid.cell_faces(c);
        let uc = 0.5 * (state.u[l] + state.u[r]);
        let s = nu * (state.u[r] - state.u[l]) / dx;
        let g = 0.5 * (state.u[l] * rho_x(l) + state.u[r] * rho_x(r));
        let px = phi.dx(t, *x);
        acc += (state.rho[c] * uc * uc + params.pressure(state.rho[c]) - s - params.k * g) * px;
    }
    acc * dx
}

fn momentum_moment(state: &FlowState, grid: &Grid, phi: &dyn WeakTest) -> f64 {
    let rf = mesh::cells_to_faces_1d(&state.rho, grid);
    grid.face_positions(0)
        .iter()
        .enumerate()
        .filter(|(f, _)| !grid.is_wall_face(*f))
        .map(|(f, x)| rf[f] * state.u[f] * phi.value(state.time, *x))
        .sum::<f64>()
        * grid.dx()
}

/// Residual of the weak momentum equation at every snapshot, with all five
/// volume terms and the forcing.
pub fn weak_residual_momentum_series(
    traj: &TrajectoryRecord,
    phi: &dyn WeakTest,
    forcing: Option<&dyn Forcing>,
) -> Vec<f64> {
    let grid = traj.grid();
    let integrand: Vec<f64> = traj
        .states
        .iter()
        .map(|s| momentum_integrand(s, &traj.params, &grid, phi, forcing))
        .collect();
    let running = cumulative_trapezoid(&traj.times, &integrand);
    let m0 = momentum_moment(&traj.states[0], &grid, phi);
    traj.states
        .iter()
        .zip(&running)
        .map(|(s, i)| momentum_moment(s, &grid, phi) - m0 - i)
        .collect()
}

pub fn weak_residual_momentum(
    traj: &TrajectoryRecord,
    phi: &dyn WeakTest,
    forcing: Option<&dyn Forcing>,
) -> f64 {
    *weak_residual_momentum_series(traj, phi, forcing)
        .last()
        .expect("trajectory has at least one snapshot")
}

/// `K int int grad rho . grad psi` over the whole record.
pub fn k_term_continuity(traj: &TrajectoryRecord, psi: &dyn WeakTest) -> f64 {
    if traj.params.k == 0.0 {
        return 0.0;
    }
    let grid = traj.grid();
    let xf = grid.face_positions(0);
    let per: Vec<f64> = traj
        .states
        .iter()
        .map(|s| {
            let mut acc = 0.0;
            for f in 0..grid.n_faces(0) {
                if grid.is_wall_face(f) {
                    continue;
                }
                let (l, r) = grid.face_neighbors(f);
                acc += (s.rho[r] - s.rho[l]) * psi.dx(s.time, xf[f]);
            }
            acc
        })
        .collect();
    traj.params.k * trapezoid(&traj.times, &per)
}

/// `K int int (u (x) grad rho) : grad phi` over the whole record.
pub fn k_term_momentum(traj: &TrajectoryRecord, phi: &dyn WeakTest) -> f64 {
    if traj.params.k == 0.0 {
        return 0.0;
    }
    let grid = traj.grid();
    let dx = grid.dx();
    let xs = grid.centers(0);
    let per: Vec<f64> = traj
        .states
        .iter()
        .map(|s| {
            let rho_x = |f: usize| {
                if grid.is_wall_face(f) {
                    0.0
                } else {
                    let (l, r) = grid.face_neighbors(f);
                    (s.rho[r] - s.rho[l]) / dx
                }
            };
            let mut acc = 0.0;
            for (c, x) in xs.iter().enumerate() {
                let (l, r) = grid.cell_faces(c);
                let g = 0.5 * (s.u[l] * rho_x(l) + s.u[r] * rho_x(r));
                acc += g * phi.dx(s.time, *x);
            }
            acc * dx
        })
        .collect();
    traj.params.k * trapezoid(&traj.times, &per)
}

#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub k: f64,
    pub term: String,
    pub member: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub term: String,
    pub member: String,
    pub slope: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VanishingKReport {
    pub rows: Vec<RateRow>,
    pub fits: Vec<RateFit>,
}

impl VanishingKReport {
    pub fn min_slope(&self) -> f64 {
        self.fits.iter().map(|f| f.slope).fold(f64::INFINITY, f64::min)
    }
}

/// Tabulates both Brenner terms per K and fits their log-log slope in K over
/// the members with `K > 0`.
pub fn vanishing_k_terms(
    family: &[&TrajectoryRecord],
    psis: &[TestFunction],
    phis: &[TestFunction],
) -> Result<VanishingKReport> {
    let positive: Vec<&&TrajectoryRecord> = family.iter().filter(|t| t.params.k > 0.0).collect();
    if positive.len() < 3 {
        return Err(Error::Family(format!(
            "vanishing K-terms need at least 3 members with K > 0, got {}",
            positive.len()
        )));
    }
    let mut rows = Vec::new();
    for traj in family {
        for psi in psis {
            rows.push(RateRow {
                k: traj.params.k,
                term: "continuity".into(),
                member: psi.id(),
                value: k_term_continuity(traj, psi),
            });
        }
        for phi in phis {
            rows.push(RateRow {
                k: traj.params.k,
                term: "momentum".into(),
                member: phi.id(),
                value: k_term_momentum(traj, phi),
            });
        }
    }
    let mut fits = Vec::new();
    for (term, members) in [("continuity", psis), ("momentum", phis)] {
        for m in members {
            let id = m.id();
            let (ks, vs): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.term == term && r.member == id && r.k > 0.0)
                .map(|r| (r.k, r.value.abs().max(f64::MIN_POSITIVE)))
                .unzip();
            fits.push(RateFit {
                term: term.into(),
                member: id,
                slope: loglog_slope(&ks, &vs),
            });
        }
    }
    Ok(VanishingKReport { rows, fits })
}

/// A renormalizing function `b` with its first two derivatives.
pub trait Renormalizer {
    fn value(&self, s: f64) -> f64;
    fn derivative(&self, _s: f64) -> Option<f64> {
        None
    }
    fn second_derivative(&self, _s: f64) -> Option<f64> {
        None
    }
}

/// `b(s) = s^2` for `s <= c`, blended to zero on `[c, 2c]` by a quintic
/// smoothstep; C^2 with support in `[0, 2c]`.
#[derive(Debug, Clone, Copy)]
pub struct SmoothBump {
    pub cutoff: f64,
}

impl Default for SmoothBump {
    fn default() -> Self {
        Self { cutoff: 1.0 }
    }
}

impl SmoothBump {
    fn blend(&self, s: f64) -> (f64, f64, f64) {
        let c = self.cutoff;
        if s <= c {
            return (1.0, 0.0, 0.0);
        }
        if s >= 2.0 * c {
            return (0.0, 0.0, 0.0);
        }
        let t = (s - c) / c;
        let h = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
        let h1 = 30.0 * t * t * (1.0 - t) * (1.0 - t) / c;
        let h2 = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / (c * c);
        (1.0 - h, -h1, -h2)
    }
}

impl Renormalizer for SmoothBump {
    fn value(&self, s: f64) -> f64 {
        s * s * self.blend(s).0
    }
    fn derivative(&self, s: f64) -> Option<f64> {
        let (w, w1, _) = self.blend(s);
        Some(2.0 * s * w + s * s * w1)
    }
    fn second_derivative(&self, s: f64) -> Option<f64> {
        let (w, w1, w2) = self.blend(s);
        Some(2.0 * w + 4.0 * s * w1 + s * s * w2)
    }
}

/// Identically zero renormalizer.
pub struct ZeroRenormalizer;

impl Renormalizer for ZeroRenormalizer {
    fn value(&self, _s: f64) -> f64 {
        0.0
    }
    fn derivative(&self, _s: f64) -> Option<f64> {
        Some(0.0)
    }
    fn second_derivative(&self, _s: f64) -> Option<f64> {
        Some(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RenormalizationReport {
    pub residual: f64,
    /// `K int int_{rho <= 1} |grad rho|^2`.
    pub low_density_capture: f64,
}

/// Space-integrated renormalized continuity budget at the final snapshot:
/// `[int b(rho)]_0^tau + int int (b'(rho) rho - b(rho)) div u + K int int b''(rho) |grad rho|^2`.
pub fn renormalization_budget(traj: &TrajectoryRecord, b: &dyn Renormalizer) -> Result<RenormalizationReport> {
    let missing = || Error::Precondition("renormalizer must supply b' and b''".into());
    b.derivative(1.0).ok_or_else(missing)?;
    b.second_derivative(1.0).ok_or_else(missing)?;
    let grid = traj.grid();
    let dx = grid.dx();
    let k = traj.params.k;
    let mut transport = Vec::with_capacity(traj.len());
    let mut capture = Vec::with_capacity(traj.len());
    for s in &traj.states {
        let mut acc = 0.0;
        for c in 0..grid.cells[0] {
            let (l, r) = grid.cell_faces(c);
            let rho = s.rho[c];
            let d1 = b.derivative(rho).ok_or_else(missing)?;
            acc += (d1 * rho - b.value(rho)) * (s.u[r] - s.u[l]);
        }
        let mut low = 0.0;
        if k > 0.0 {
            for f in 0..grid.n_faces(0) {
                if grid.is_wall_face(f) {
                    continue;
                }
                let (l, r) = grid.face_neighbors(f);
                let rf = 0.5 * (s.rho[l] + s.rho[r]);
                let g = (s.rho[r] - s.rho[l]) / dx;
                let d2 = b.second_derivative(rf).ok_or_else(missing)?;
                acc += k * d2 * g * g * dx;
                if rf <= 1.0 {
                    low += g * g * dx;
                }
            }
        }
        transport.push(acc);
        capture.push(k * low);
    }
    let mass = |s: &FlowState| s.rho.iter().map(|r| b.value(*r)).sum::<f64>() * dx;
    let last = traj.states.last().expect("non-empty record");
    Ok(RenormalizationReport {
        residual: mass(last) - mass(&traj.states[0]) + trapezoid(&traj.times, &transport),
        low_density_capture: trapezoid(&traj.times, &capture),
    })
}

/// Maximum number of inverse-power iterations.
pub const POINCARE_MAX_ITERATIONS: usize = 10_000;

/// `1 / lambda_1` of the discrete Dirichlet `-Laplacian` acting on the
/// interior face velocities of a no-slip grid.
pub fn poincare_constant(grid: &Grid) -> Result<f64> {
    if grid.dim != 1 || grid.bc != Boundary::NoSlip {
        return Err(Error::Precondition(
            "the Poincaré constant is computed on 1D no-slip grids".into(),
        ));
    }
    let m = grid.cells[0] - 1;
    if m == 0 {
        return Err(Error::Precondition("need at least two cells".into()));
    }
    let h = grid.dx();
    let diag = 2.0 / (h * h);
    let off = -1.0 / (h * h);
    let mut v: Vec<f64> = (0..m).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64 / 13.0).collect();
    let mut lambda = f64::NAN;
    for _ in 0..POINCARE_MAX_ITERATIONS {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let w = thomas(m, off, diag, off, &v);
        // Rayleigh quotient of the inverse: v.w / w.w ~ lambda_1
        let vw: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let ww: f64 = w.iter().map(|x| x * x).sum();
        let next = vw / ww;
        let done = (next - lambda).abs() <= 1e-14 * next.abs();
        lambda = next;
        v = w;
        if done {
            return Ok(1.0 / lambda);
        }
    }
    Err(Error::EigenIteration {
        iterations: POINCARE_MAX_ITERATIONS,
    })
}

/// Solves the constant-coefficient tridiagonal system `(lo, diag, up) x = rhs`.
fn thomas(m: usize, lo: f64, diag: f64, up: f64, rhs: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    c[0] = up / diag;
    d[0] = rhs[0] / diag;
    for i in 1..m {
        let denom = diag - lo * c[i - 1];
        c[i] = up / denom;
        d[i] = (rhs[i] - lo * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = d[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::adaptive_simpson;
    use crate::solver::{run, RunSpec};
    use std::f64::consts::PI;

    fn law() -> PressureLaw {
        PressureLaw::power_law(1.0, 2.0)
    }

    #[test]
    fn energy_examples() {
        let grid = Grid::new_1d(16, 1.0, Boundary::NoSlip).unwrap();
        assert_eq!(energy(&FlowState::uniform(&grid, 1.0, 0.0), &law(), &grid), 0.0);
        let per = Grid::new_1d(16, 2.0, Boundary::Periodic).unwrap();
        let e = energy(&FlowState::uniform(&per, 1.0, 2.0), &law(), &per);
        assert!((e - 2.0 * 2.0).abs() < 1e-13);
        let p2 = 2.0 * adaptive_simpson(|z| law().p(z) / (z * z), 1.0, 2.0, 1e-13).unwrap();
        let e = energy(&FlowState::uniform(&grid, 2.0, 0.0), &law(), &grid);
        assert!((e - p2).abs() < 1e-12);
    }

    fn record(grid: &Grid, params: ModelParams, initial: FlowState, t_end: f64, every: f64) -> TrajectoryRecord {
        let k = (t_end / every).round() as usize;
        run(&RunSpec {
            grid: grid.clone(),
            params,
            initial,
            t_end,
            safety: 0.4,
            snapshots: (1..k).map(|i| i as f64 * every).collect(),
            forcing: None,
        })
        .unwrap()
    }

    fn smooth(grid: &Grid) -> FlowState {
        let rho = grid.centers(0).iter().map(|x| 1.0 + 0.3 * (PI * x).cos()).collect();
        let mut u: Vec<f64> = grid.face_positions(0).iter().map(|x| 0.4 * (2.0 * PI * x).sin()).collect();
        let n = u.len();
        u[0] = 0.0;
        u[n - 1] = 0.0;
        FlowState::new(rho, u, 0.0, grid).unwrap()
    }

    #[test]
    fn rest_budget_is_zero() {
        let grid = Grid::new_1d(32, 1.0, Boundary::NoSlip).unwrap();
        let rec = record(&grid, ModelParams::brenner(0.1, 0.0, 0.01, law()), FlowState::uniform(&grid, 1.3, 0.0), 0.2, 0.05);
        let b = energy_budget(&rec);
        assert!(b.max_abs <= 1e-13);
        let a = apriori_bounds(&rec);
        assert!(a.sup_potential > 0.0);
        assert_eq!(&a.entries()[1..], &[0.0; 5]);
        let rest = TestFunction {
            kind: TestFunctionKind::TensorTrig,
            index: 2,
            vector: true,
            extent: 1.0,
            scale: 1.0,
        };
        assert!(weak_residual_momentum(&rec, &rest, None).abs() <= 1e-13);
    }

    #[test]
    fn budget_residual_is_dissipative_and_converges() {
        let params = ModelParams::brenner(0.1, 0.0, 1e-3, law());
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for n in [32, 64, 128] {
            let grid = Grid::new_1d(n, 1.0, Boundary::NoSlip).unwrap();
            let rec = record(&grid, params.clone(), smooth(&grid), 0.2, 0.02);
            let b = energy_budget(&rec);
            assert!(b.max_signed <= 1e-10, "{:?}", b.residuals);
            errs.push(b.max_abs);
            hs.push(grid.dx());
        }
        assert!(loglog_slope(&hs, &errs) >= 0.9, "{errs:?}");
    }

    #[test]
    fn weak_residuals_converge_and_are_linear() {
        let params = ModelParams::brenner(0.1, 0.0, 1e-2, law());
        let fam = TestFunctionFamily::new(TestFunctionKind::TensorTrig, 2, 1.0);
        let psi = fam.scalars()[1];
        let phi = fam.vectors()[0];
        let mut rc = Vec::new();
        let mut rm = Vec::new();
        let mut hs = Vec::new();
        for n in [32, 64, 128] {
            let grid = Grid::new_1d(n, 1.0, Boundary::NoSlip).unwrap();
            let rec = record(&grid, params.clone(), smooth(&grid), 0.2, 0.002);
            rc.push(weak_residual_continuity(&rec, &psi, None).abs());
            rm.push(weak_residual_momentum(&rec, &phi, None).abs());
            hs.push(grid.dx());
            let a = fam.scalars()[0];
            let sum = Sum(&a, &psi);
            let lhs = weak_residual_continuity(&rec, &sum, None);
            let rhs = weak_residual_continuity(&rec, &a, None) + weak_residual_continuity(&rec, &psi, None);
            assert!((lhs - rhs).abs() < 1e-12);
            let mass = weak_residual_continuity(&rec, &Constant(1.0), None);
            assert!(mass.abs() < 1e-12);
        }
        assert!(loglog_slope(&hs, &rc) >= 0.9, "{rc:?}");
        assert!(loglog_slope(&hs, &rm) >= 0.9, "{rm:?}");
    }

    #[test]
    fn k_terms_vanish_for_navier_stokes() {
        let grid = Grid::new_1d(32, 1.0, Boundary::NoSlip).unwrap();
        let rec = record(&grid, ModelParams::navier_stokes(0.1, 0.0, law()), smooth(&grid), 0.1, 0.05);
        let fam = TestFunctionFamily::new(TestFunctionKind::PolynomialBubble, 2, 1.0);
        assert_eq!(k_term_continuity(&rec, &fam.scalars()[0]), 0.0);
        assert_eq!(k_term_momentum(&rec, &fam.vectors()[0]), 0.0);
        let brenner = record(&grid, ModelParams::brenner(0.1, 0.0, 0.1, law()), smooth(&grid), 0.1, 0.05);
        assert_eq!(k_term_continuity(&brenner, &Constant(3.0)), 0.0);
        assert!(matches!(
            vanishing_k_terms(&[&rec, &brenner], &fam.scalars(), &fam.vectors()),
            Err(Error::Family(_))
        ));
    }

    #[test]
    fn test_function_derivatives_and_norms() {
        for kind in [TestFunctionKind::TensorTrig, TestFunctionKind::PolynomialBubble] {
            let fam = TestFunctionFamily::new(kind, 3, 2.0);
            for f in fam.scalars().into_iter().chain(fam.vectors()) {
                let h = 1e-6;
                for &(t, x) in &[(0.0, 0.3), (0.7, 1.1), (1.5, 1.9)] {
                    let dt = (f.value(t + h, x) - f.value(t - h, x)) / (2.0 * h);
                    let dx = (f.value(t, x + h) - f.value(t, x - h)) / (2.0 * h);
                    assert!((dt - f.dt(t, x)).abs() < 1e-7);
                    assert!((dx - f.dx(t, x)).abs() < 1e-7);
                }
                if f.vector {
                    assert_eq!(f.value(0.3, 0.0), 0.0);
                    assert!(f.value(0.3, 2.0).abs() < 1e-15);
                }
                // sampled sup never exceeds the closed-form norm
                let mut sup = [0.0f64; 3];
                for i in 0..=400 {
                    let x = 2.0 * i as f64 / 400.0;
                    sup[0] = sup[0].max(f.value(0.0, x).abs());
                    sup[1] = sup[1].max(f.dt(0.0, x).abs());
                    sup[2] = sup[2].max(f.dx(0.0, x).abs());
                }
                let sampled: f64 = sup.iter().sum();
                assert!(sampled <= f.c1_norm() + 1e-12);
                assert!(sampled >= 0.95 * f.c1_norm(), "{} {sampled} {}", f.id(), f.c1_norm());
            }
        }
    }

    #[test]
    fn renormalization_examples() {
        let grid = Grid::new_1d(64, 1.0, Boundary::NoSlip).unwrap();
        let rho = grid.centers(0).iter().map(|x| 2.0 + 0.5 * (PI * x).cos()).collect();
        let init = FlowState::new(rho, smooth(&grid).u, 0.0, &grid).unwrap();
        let rec = record(&grid, ModelParams::brenner(0.1, 0.0, 0.01, law()), init, 0.1, 0.01);
        let zero = renormalization_budget(&rec, &ZeroRenormalizer).unwrap();
        assert_eq!(zero.residual, 0.0);
        let flat = renormalization_budget(&rec, &SmoothBump { cutoff: 0.5 }).unwrap();
        assert!(flat.residual.abs() <= 1e-14);
        assert_eq!(flat.low_density_capture, 0.0);
        struct NoDerivs;
        impl Renormalizer for NoDerivs {
            fn value(&self, s: f64) -> f64 {
                s
            }
        }
        assert!(matches!(renormalization_budget(&rec, &NoDerivs), Err(Error::Precondition(_))));
    }

    #[test]
    fn smooth_bump_derivatives() {
        let b = SmoothBump::default();
        let h = 1e-5;
        for s in [0.3, 0.99, 1.01, 1.3, 1.7, 1.99, 2.5] {
            let d1 = (b.value(s + h) - b.value(s - h)) / (2.0 * h);
            assert!((d1 - b.derivative(s).unwrap()).abs() < 1e-7, "{s}");
            let d2 = (b.derivative(s + h).unwrap() - b.derivative(s - h).unwrap()) / (2.0 * h);
            assert!((d2 - b.second_derivative(s).unwrap()).abs() < 1e-6, "{s}");
        }
        assert_eq!(b.value(2.0), 0.0);
    }

    #[test]
    fn renormalized_budget_converges() {
        let params = ModelParams::brenner(0.1, 0.0, 0.01, law());
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for n in [32, 64, 128, 256] {
            let grid = Grid::new_1d(n, 1.0, Boundary::NoSlip).unwrap();
            let rec = record(&grid, params.clone(), smooth(&grid), 0.2, 0.002);
            errs.push(renormalization_budget(&rec, &SmoothBump::default()).unwrap().residual.abs());
            hs.push(grid.dx());
        }
        assert!(loglog_slope(&hs, &errs) >= 0.9, "{errs:?}");
    }

    /// Discrete Dirichlet eigenvalue of the three-point Laplacian.
    fn oracle(n: usize, l: f64) -> f64 {
        let h = l / n as f64;
        let lambda = 4.0 / (h * h) * (PI * h / (2.0 * l)).sin().powi(2);
        1.0 / lambda
    }

    #[test]
    fn poincare_constant_examples() {
        let mut prev = f64::INFINITY;
        for n in [8, 16, 64, 256, 1024] {
            let g = Grid::new_1d(n, 1.0, Boundary::NoSlip).unwrap();
            let c = poincare_constant(&g).unwrap();
            assert!((c - oracle(n, 1.0)).abs() <= 1e-10 * c);
            assert!(c >= 1.0 / (PI * PI));
            assert!(c < prev);
            prev = c;
        }
        let g = Grid::new_1d(1024, 1.0, Boundary::NoSlip).unwrap();
        assert!((poincare_constant(&g).unwrap() * PI * PI - 1.0).abs() < 1e-5);
        let half = Grid::new_1d(1024, 0.5, Boundary::NoSlip).unwrap();
        let ratio = poincare_constant(&half).unwrap() / poincare_constant(&g).unwrap();
        assert!((ratio - 0.25).abs() < 1e-10);
        let per = Grid::new_1d(8, 1.0, Boundary::Periodic).unwrap();
        assert!(poincare_constant(&per).is_err());
    }

    #[test]
    fn poincare_holds_on_trajectory() {
        let grid = Grid::new_1d(64, 1.0, Boundary::NoSlip).unwrap();
        let rec = record(&grid, ModelParams::navier_stokes(0.1, 0.0, law()), smooth(&grid), 0.2, 0.02);
        let c = poincare_constant(&grid).unwrap();
        assert!(poincare_margin(&rec, c) >= 0.0);
    }
}

//! Relative energy between (measure-valued) states and a smooth reference,
//! and the weak-strong stability experiment built on it.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::energy_defect;
use crate::error::{Error, Result};
use crate::mesh::{self, Boundary, Grid};
use crate::pressure::PressureLaw;
use crate::reference::{check_reference, ReferenceSolution};
use crate::solver::{manufactured_forcing, run, FlowState, ModelParams, RunSpec};
use crate::young_measure::EmpiricalYoungMeasure;

/// `int [rho |u - U|^2 / 2 + P(rho) - P'(r)(rho - r) - P(r)]` with cell-centred
/// velocities.
pub fn relative_energy_atomic(
    state: &FlowState,
    grid: &Grid,
    reference: &dyn ReferenceSolution,
    law: &PressureLaw,
) -> Result<f64> {
    let t = state.time;
    let uc = mesh::faces_to_cells_1d(&state.u, grid);
    let mut acc = 0.0;
    for (c, x) in grid.centers(0).iter().enumerate() {
        let r = reference.density(t, *x);
        let du = uc[c] - reference.velocity(t, *x);
        acc += 0.5 * state.rho[c] * du * du + law.helmholtz_distance(state.rho[c], r)?;
    }
    Ok(acc * grid.dx())
}

/// Relative energy of the measure at snapshot `j`:
/// `sum_bins <nu; s |v - U|^2 / 2 + P(s) - P'(r)(s - r) - P(r)> h`.
pub fn relative_energy_mv(
    eym: &EmpiricalYoungMeasure,
    j: usize,
    reference: &dyn ReferenceSolution,
    law: &PressureLaw,
) -> Result<f64> {
    let t = eym.times[j];
    let mut acc = 0.0;
    for (atoms, x) in eym.snapshot(j).iter().zip(eym.lattice.centers(0)) {
        let r = reference.density(t, x);
        let u = reference.velocity(t, x);
        for a in atoms {
            let dv = a.v - u;
            acc += a.w * (0.5 * a.s * dv * dv + law.helmholtz_distance(a.s, r)?);
        }
    }
    Ok(acc * eym.lattice.dx())
}

/// `int |u_x - U_x|^2` over the cells.
pub fn gradient_distance(state: &FlowState, grid: &Grid, reference: &dyn ReferenceSolution) -> f64 {
    let dx = grid.dx();
    grid.centers(0)
        .iter()
        .enumerate()
        .map(|(c, x)| {
            let (l, r) = grid.cell_faces(c);
            let g = (state.u[r] - state.u[l]) / dx - reference.velocity_x(state.time, *x);
            g * g * dx
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GronwallFit {
    pub rate: f64,
    pub passed: bool,
}

fn envelope_holds(times: &[f64], series: &[f64], c: f64, tol: f64) -> bool {
    let e0 = series[0];
    times
        .iter()
        .zip(series)
        .all(|(t, e)| *e <= e0 * (c * (t - times[0])).exp() + tol)
}

/// Smallest `c >= 0` with `E(tau) <= E(0) exp(c tau) + tol` at every sample,
/// by bisection to relative precision 1e-6. Fails when no `c <= 1e6` works.
pub fn gronwall_envelope(times: &[f64], series: &[f64], tol: f64) -> GronwallFit {
    if series.is_empty() || envelope_holds(times, series, 0.0, tol) {
        return GronwallFit {
            rate: 0.0,
            passed: true,
        };
    }
    let mut hi = 1.0;
    while !envelope_holds(times, series, hi, tol) {
        hi *= 2.0;
        if hi > 1e6 {
            return GronwallFit {
                rate: f64::INFINITY,
                passed: false,
            };
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if envelope_holds(times, series, mid, tol) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    GronwallFit {
        rate: hi,
        passed: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum StabilityMode {
    Matched,
    /// Initial data `(r + eps cos(pi x/L), U + eps sin(pi x/L))` at time 0.
    Perturbed { amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rung {
    pub k: f64,
    pub cells: usize,
}

/// One weak-strong stability experiment. Every rung runs the Brenner model
/// with its own `K` under the forcing that makes the reference an exact
/// Navier-Stokes solution.
#[derive(Clone)]
pub struct StabilityConfig {
    pub reference: Arc<dyn ReferenceSolution>,
    pub mu: f64,
    pub eta: f64,
    pub law: PressureLaw,
    pub extent: f64,
    pub ladder: Vec<Rung>,
    pub t_end: f64,
    pub snapshot_every: f64,
    pub safety: f64,
    pub mode: StabilityMode,
}

#[derive(Debug, Clone, Serialize)]
pub struct MemberSeries {
    pub k: f64,
    pub cells: usize,
    pub tau: Vec<f64>,
    pub e_mv: Vec<f64>,
    pub d: Vec<f64>,
    pub grad_distance: Vec<f64>,
}

impl MemberSeries {
    pub fn total(&self, j: usize) -> f64 {
        self.e_mv[j] + self.d[j]
    }

    pub fn final_total(&self) -> f64 {
        self.total(self.tau.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceNorms {
    pub inf_r: f64,
    pub sup_r: f64,
    pub sup_u: f64,
    pub sup_r_x: f64,
    pub sup_u_x: f64,
    pub sup_r_t: f64,
    pub sup_u_t: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchedVerdict {
    /// `E_mv(T) + D(T)` per rung, coarsest first.
    pub finals: Vec<f64>,
    pub monotone: bool,
    /// Coarsest over finest.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RelativeEnergyReport {
    pub mode: StabilityMode,
    pub members: Vec<MemberSeries>,
    pub lambda: Option<f64>,
    pub matched: Option<MatchedVerdict>,
    /// Set when a perturbed run had zero initial distance.
    pub switched_to_matched: bool,
    pub reference_norms: ReferenceNorms,
}

impl RelativeEnergyReport {
    /// `E_mv(tau) + D(tau) <= Lambda E_mv(0)` at every recorded `tau`.
    pub fn bound_holds(&self) -> bool {
        match self.lambda {
            Some(l) => self
                .members
                .iter()
                .all(|m| (0..m.tau.len()).all(|j| m.total(j) <= l * m.e_mv[0] * (1.0 + 1e-12))),
            None => false,
        }
    }
}

fn reference_norms(reference: &dyn ReferenceSolution, grid: &Grid, times: &[f64]) -> ReferenceNorms {
    let mut n = ReferenceNorms {
        inf_r: f64::INFINITY,
        sup_r: 0.0,
        sup_u: 0.0,
        sup_r_x: 0.0,
        sup_u_x: 0.0,
        sup_r_t: 0.0,
        sup_u_t: 0.0,
    };
    for &t in times {
        for x in grid.centers(0) {
            let r = reference.density(t, x);
            n.inf_r = n.inf_r.min(r);
            n.sup_r = n.sup_r.max(r);
            n.sup_u = n.sup_u.max(reference.velocity(t, x).abs());
            n.sup_r_x = n.sup_r_x.max(reference.density_x(t, x).abs());
            n.sup_u_x = n.sup_u_x.max(reference.velocity_x(t, x).abs());
            n.sup_r_t = n.sup_r_t.max(reference.density_t(t, x).abs());
            n.sup_u_t = n.sup_u_t.max(reference.velocity_t(t, x).abs());
        }
    }
    n
}

fn initial_state(cfg: &StabilityConfig, grid: &Grid) -> Result<FlowState> {
    let mut s = FlowState::sample(cfg.reference.as_ref(), grid, 0.0);
    if let StabilityMode::Perturbed { amplitude } = cfg.mode {
        let l = cfg.extent;
        for (r, x) in s.rho.iter_mut().zip(grid.centers(0)) {
            *r += amplitude * (std::f64::consts::PI * x / l).cos();
        }
        for (f, (u, x)) in s.u.iter_mut().zip(grid.face_positions(0)).enumerate() {
            if !grid.is_wall_face(f) {
                *u += amplitude * (std::f64::consts::PI * x / l).sin();
            }
        }
    }
    s.check(grid)?;
    Ok(s)
}

fn run_member(cfg: &StabilityConfig, rung: Rung) -> Result<MemberSeries> {
    let grid = Grid::new_1d(rung.cells, cfg.extent, Boundary::NoSlip)?;
    let ns = ModelParams::navier_stokes(cfg.mu, cfg.eta, cfg.law.clone());
    let forcing = Arc::new(manufactured_forcing(cfg.reference.clone(), &ns, &grid, cfg.t_end)?);
    let k = (cfg.t_end / cfg.snapshot_every).round() as usize;
    let spec = RunSpec {
        grid: grid.clone(),
        params: ns.with_k(rung.k),
        initial: initial_state(cfg, &grid)?,
        t_end: cfg.t_end,
        safety: cfg.safety,
        snapshots: (1..k).map(|i| i as f64 * cfg.snapshot_every).collect(),
        forcing: Some(forcing),
    };
    let rec = run(&spec).map_err(|f| f.error)?;
    let e_mv = rec
        .states
        .iter()
        .map(|s| relative_energy_atomic(s, &grid, cfg.reference.as_ref(), &cfg.law))
        .collect::<Result<Vec<_>>>()?;
    Ok(MemberSeries {
        k: rung.k,
        cells: rung.cells,
        tau: rec.times.clone(),
        d: energy_defect(&rec),
        grad_distance: rec
            .states
            .iter()
            .map(|s| gradient_distance(s, &grid, cfg.reference.as_ref()))
            .collect(),
        e_mv,
    })
}

/// Runs the ladder and evaluates `E_mv + D` per rung. Each rung is an atomic
/// solution, so its measure is the Dirac measure of its own state and its
/// defect is the energy it loses beyond viscous dissipation.
pub fn stability_experiment(cfg: &StabilityConfig) -> Result<RelativeEnergyReport> {
    if cfg.ladder.is_empty() {
        return Err(Error::Config("stability ladder is empty".into()));
    }
    if !(cfg.snapshot_every > 0.0 && cfg.snapshot_every <= cfg.t_end) {
        return Err(Error::Config("need 0 < snapshot_every <= T".into()));
    }
    let finest = cfg.ladder.iter().map(|r| r.cells).max().unwrap_or(1);
    let grid = Grid::new_1d(finest, cfg.extent, Boundary::NoSlip)?;
    let k = (cfg.t_end / cfg.snapshot_every).round() as usize;
    let times: Vec<f64> = (0..=k).map(|i| i as f64 * cfg.t_end / k as f64).collect();
    check_reference(cfg.reference.as_ref(), &grid, &times)?;
    let norms = reference_norms(cfg.reference.as_ref(), &grid, &times);

    let members = cfg
        .ladder
        .par_iter()
        .map(|rung| run_member(cfg, *rung))
        .collect::<Result<Vec<_>>>()?;

    let zero_start = members.iter().any(|m| !(m.e_mv[0] > 0.0));
    let (lambda, switched) = match cfg.mode {
        StabilityMode::Perturbed { .. } if !zero_start => {
            let l = members
                .iter()
                .flat_map(|m| (0..m.tau.len()).map(move |j| m.total(j) / m.e_mv[0]))
                .fold(0.0f64, f64::max);
            (Some(l), false)
        }
        StabilityMode::Perturbed { .. } => (None, true),
        StabilityMode::Matched => (None, false),
    };
    let matched = lambda.is_none().then(|| {
        let finals: Vec<f64> = members.iter().map(MemberSeries::final_total).collect();
        let monotone = finals.windows(2).all(|w| w[1] < w[0]);
        let ratio = finals[0] / finals[finals.len() - 1];
        MatchedVerdict {
            finals,
            monotone,
            ratio,
        }
    });
    Ok(RelativeEnergyReport {
        mode: cfg.mode,
        members,
        lambda,
        matched,
        switched_to_matched: switched,
        reference_norms: norms,
    })
}

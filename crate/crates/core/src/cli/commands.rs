//! Experiment orchestration behind the `mvflow` subcommands.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{parse_config, ForcingModel, InitialConfig, RunConfig};
use super::manifest::{sha256_hex, RunManifest};
use crate::diagnostics::{
    apriori_bounds, apriori_quadrature_error, energy_budget, poincare_constant, vanishing_k_terms, weak_residual_continuity,
    weak_residual_momentum, AprioriReport,
};
use crate::error::{Error, Result};
use crate::mesh::{self, Boundary, Grid};
use crate::output::{num, read_csv, write_atomic, write_csv};
use crate::reference::TravellingWave;
use crate::relative_energy::{gronwall_envelope, stability_experiment, RelativeEnergyReport, StabilityConfig, StabilityMode};
use crate::solver::{manufactured_forcing, run, FlowState, Forcing, ModelParams, RunSpec, TrajectoryRecord};
use crate::young_measure::{
    build_empirical_measure, estimate_defects, validate_dmv, write_atoms, write_defects_csv, FamilyParameter,
    Member, SolutionFamily,
};

pub const CONFIG: &str = "config.toml";
pub const TRAJECTORY: &str = "trajectory.json";
pub const FAMILY: &str = "family.json";

/// What a command produced. Non-empty `failures` means an assertion failed.
#[derive(Debug, Default)]
pub struct CommandReport {
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub failures: Vec<String>,
}

impl CommandReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn config_hash(cfg: &RunConfig) -> String {
    sha256_hex(cfg.to_toml().as_bytes())
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn initial_state(cfg: &RunConfig, grid: &Grid) -> Result<FlowState> {
    Ok(match cfg.initial {
        InitialConfig::Manufactured { .. } => FlowState::sample(&TravellingWave, grid, 0.0),
        InitialConfig::Profile {
            rho_mean,
            rho_amp,
            rho_mode,
            u_amp,
            u_mode,
        } => {
            let l = grid.extent[0];
            let k_rho = rho_mode as f64 * std::f64::consts::PI / l;
            let k_u = u_mode as f64 * std::f64::consts::PI / l;
            let rho = grid.centers(0).iter().map(|x| rho_mean + rho_amp * (k_rho * x).cos()).collect();
            let u = grid
                .face_positions(0)
                .iter()
                .enumerate()
                .map(|(f, x)| if grid.is_wall_face(f) { 0.0 } else { u_amp * (k_u * x).sin() })
                .collect();
            FlowState::new(rho, u, 0.0, grid)?
        }
        InitialConfig::Rest { density } => FlowState::uniform(grid, density, 0.0),
    })
}

pub fn forcing(cfg: &RunConfig, grid: &Grid) -> Result<Option<Arc<dyn Forcing>>> {
    match cfg.initial {
        InitialConfig::Manufactured { forcing } => {
            let params = match forcing {
                ForcingModel::Model => cfg.params()?,
                ForcingModel::NavierStokes => ModelParams::navier_stokes(cfg.model.mu, cfg.model.eta, cfg.law()?),
            };
            let f = manufactured_forcing(Arc::new(TravellingWave), &params, grid, cfg.time.t_end)?;
            Ok(Some(Arc::new(f)))
        }
        _ => Ok(None),
    }
}

/// Equally spaced interior snapshot times; `0` and `t_end` are added by the
/// solver.
pub fn snapshot_times(t_end: f64, every: f64) -> Vec<f64> {
    if t_end <= 0.0 {
        return Vec::new();
    }
    let n = ((t_end / every).round() as usize).max(1);
    (1..n).map(|i| t_end * i as f64 / n as f64).collect()
}

pub fn run_spec(cfg: &RunConfig) -> Result<RunSpec> {
    let grid = cfg.grid()?;
    Ok(RunSpec {
        params: cfg.params()?,
        initial: initial_state(cfg, &grid)?,
        t_end: cfg.time.t_end,
        safety: cfg.time.safety,
        snapshots: snapshot_times(cfg.time.t_end, cfg.snapshot_every()),
        forcing: forcing(cfg, &grid)?,
        grid,
    })
}

fn write_trajectory(dir: &Path, rec: &TrajectoryRecord) -> Result<Vec<PathBuf>> {
    let grid = rec.grid();
    let xc = grid.centers(0);
    let xf = grid.face_positions(0);
    let traj = dir.join(TRAJECTORY);
    write_atomic(&traj, &json(rec)?)?;
    let snapshots = dir.join("snapshots.csv");
    write_csv(
        &snapshots,
        &["t", "x", "rho", "u"],
        rec.states.iter().flat_map(|s| {
            let uc = mesh::faces_to_cells_1d(&s.u, &grid);
            let xc = &xc;
            (0..xc.len()).map(move |c| vec![num(s.time), num(xc[c]), num(s.rho[c]), num(uc[c])])
        }),
    )?;
    let faces = dir.join("faces.csv");
    write_csv(
        &faces,
        &["t", "x", "u"],
        rec.states
            .iter()
            .flat_map(|s| xf.iter().zip(&s.u).map(move |(x, u)| vec![num(s.time), num(*x), num(*u)])),
    )?;
    Ok(vec![traj, snapshots, faces])
}

/// Runs one configuration into `dir`. The manifest is written whether or not
/// the run succeeds.
pub fn cmd_run(cfg: &RunConfig, dir: &Path) -> Result<CommandReport> {
    let clock = Instant::now();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hash = config_hash(cfg);
    let cfg_path = dir.join(CONFIG);
    write_atomic(&cfg_path, cfg.to_toml().as_bytes())?;
    let spec = match run_spec(cfg) {
        Ok(s) => s,
        Err(e) => {
            RunManifest::write(dir, "run", &hash, clock.elapsed().as_secs_f64(), Some(e.to_string()))?;
            return Err(e);
        }
    };
    match run(&spec) {
        Ok(rec) => {
            let mut outputs = vec![cfg_path];
            outputs.extend(write_trajectory(dir, &rec)?);
            RunManifest::write(dir, "run", &hash, clock.elapsed().as_secs_f64(), None)?;
            Ok(CommandReport {
                outputs,
                ..Default::default()
            })
        }
        Err(fail) => {
            write_trajectory(dir, &fail.partial)?;
            RunManifest::write(dir, "run", &hash, clock.elapsed().as_secs_f64(), Some(fail.error.to_string()))?;
            Err(fail.error)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    K,
    #[serde(rename = "delta")]
    Delta,
    #[serde(rename = "cells")]
    Cells,
}

impl FromStr for SweepParameter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" => Ok(SweepParameter::K),
            "delta" => Ok(SweepParameter::Delta),
            "cells" => Ok(SweepParameter::Cells),
            other => Err(Error::Validation(vec![format!(
                "sweep parameter `{other}` is not one of K, delta, cells"
            )])),
        }
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParameter::K => "K",
            SweepParameter::Delta => "delta",
            SweepParameter::Cells => "cells",
        })
    }
}

impl SweepParameter {
    fn family_parameter(self) -> FamilyParameter {
        match self {
            SweepParameter::K => FamilyParameter::K,
            SweepParameter::Delta => FamilyParameter::Delta,
            SweepParameter::Cells => FamilyParameter::H,
        }
    }

    fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = base.clone();
        match self {
            SweepParameter::K => cfg.model.k = value,
            SweepParameter::Delta => cfg.model.delta = value,
            SweepParameter::Cells => {
                if !(value >= 2.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                    return Err(Error::Validation(vec![format!("cells = {value} is not an integer >= 2")]));
                }
                cfg.grid.cells = value as usize;
            }
        }
        let v = cfg.violations();
        if v.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Family label of a member: the parameter itself, or the mesh width.
    fn label(self, cfg: &RunConfig) -> f64 {
        match self {
            SweepParameter::K => cfg.model.k,
            SweepParameter::Delta => cfg.model.delta,
            SweepParameter::Cells => cfg.grid.extent / cfg.grid.cells as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    pub value: f64,
    pub dir: String,
    pub ok: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyManifest {
    pub parameter: SweepParameter,
    pub base_config_hash: String,
    pub members: Vec<FamilyMember>,
}

/// Runs every ladder value as its own run directory under `dir/members`.
pub fn cmd_sweep(base: &RunConfig, parameter: SweepParameter, values: &[f64], dir: &Path) -> Result<CommandReport> {
    let clock = Instant::now();
    if values.is_empty() {
        return Err(Error::Validation(vec!["sweep ladder is empty".into()]));
    }
    let configs = values
        .iter()
        .map(|v| parameter.apply(base, *v))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(CONFIG), base.to_toml().as_bytes())?;
    let members: Vec<FamilyMember> = configs
        .par_iter()
        .zip(values)
        .enumerate()
        .map(|(i, (cfg, v))| {
            let rel = format!("members/{i:02}");
            let result = cmd_run(cfg, &dir.join(&rel));
            FamilyMember {
                value: *v,
                dir: rel,
                ok: result.is_ok(),
                error: result.err().map(|e| e.to_string()),
            }
        })
        .collect();
    let mut report = CommandReport::default();
    for m in &members {
        if let Some(e) = &m.error {
            report.warnings.push(format!("member {parameter} = {} failed: {e}", m.value));
        }
        report.outputs.push(dir.join(&m.dir));
    }
    let family = FamilyManifest {
        parameter,
        base_config_hash: config_hash(base),
        members,
    };
    write_atomic(&dir.join(FAMILY), &json(&family)?)?;
    RunManifest::write(dir, "sweep", &family.base_config_hash, clock.elapsed().as_secs_f64(), None)?;
    Ok(report)
}

pub struct LoadedRun {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub record: TrajectoryRecord,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let config = parse_config(&dir.join(CONFIG))?;
    let record: TrajectoryRecord = read_json(&dir.join(TRAJECTORY))?;
    if let Some(f) = &record.failure {
        return Err(Error::Family(format!("{}: run failed: {f}", dir.display())));
    }
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        config,
        record,
    })
}

pub struct LoadedFamily {
    pub base: RunConfig,
    pub manifest: FamilyManifest,
    /// Successful members ordered from the largest label to the smallest.
    pub runs: Vec<LoadedRun>,
    pub warnings: Vec<String>,
}

pub fn is_family(dir: &Path) -> bool {
    dir.join(FAMILY).exists()
}

pub fn load_family(dir: &Path) -> Result<LoadedFamily> {
    let manifest: FamilyManifest = read_json(&dir.join(FAMILY))?;
    let base = parse_config(&dir.join(CONFIG))?;
    let mut warnings = Vec::new();
    let mut runs = Vec::new();
    for m in &manifest.members {
        if !m.ok {
            warnings.push(format!(
                "skipping failed member {} = {}: {}",
                manifest.parameter,
                m.value,
                m.error.as_deref().unwrap_or("unknown error")
            ));
            continue;
        }
        match load_run(&dir.join(&m.dir)) {
            Ok(r) => runs.push(r),
            Err(e) => warnings.push(format!("skipping member {}: {e}", m.dir)),
        }
    }
    let p = manifest.parameter;
    runs.sort_by(|a, b| p.label(&b.config).total_cmp(&p.label(&a.config)));
    Ok(LoadedFamily {
        base,
        manifest,
        runs,
        warnings,
    })
}

fn diagnose_run(run: &LoadedRun) -> Result<(Vec<PathBuf>, AprioriReport)> {
    let rec = &run.record;
    let grid = rec.grid();
    let budget = energy_budget(rec);
    let budget_path = run.dir.join("budget.csv");
    write_csv(
        &budget_path,
        &["t", "energy", "residual"],
        (0..budget.times.len()).map(|i| {
            let r = if i == 0 { 0.0 } else { budget.residuals[i - 1] };
            vec![num(budget.times[i]), num(budget.energy[i]), num(r)]
        }),
    )?;
    let apriori = apriori_bounds(rec);
    let apriori_path = run.dir.join("apriori.csv");
    write_csv(
        &apriori_path,
        &["quantity", "value", "time_quadrature_error"],
        AprioriReport::NAMES
            .iter()
            .zip(apriori.entries())
            .zip(apriori_quadrature_error(rec))
            .map(|((n, v), q)| vec![n.to_string(), num(v), num(q)]),
    )?;
    let force = forcing(&run.config, &grid)?;
    let force = force.as_deref();
    let tests = run.config.ym.test_family(grid.extent[0]);
    let mut rows = Vec::new();
    for psi in tests.scalars() {
        rows.push(vec![psi.id(), "continuity".into(), num(weak_residual_continuity(rec, &psi, force))]);
    }
    for phi in tests.vectors() {
        rows.push(vec![phi.id(), "momentum".into(), num(weak_residual_momentum(rec, &phi, force))]);
    }
    let weak_path = run.dir.join("weak_residuals.csv");
    write_csv(&weak_path, &["member-id", "equation", "residual"], rows)?;
    Ok((vec![budget_path, apriori_path, weak_path], apriori))
}

fn refresh_manifest(dir: &Path, stage: &str, hash: &str, clock: Instant) -> Result<()> {
    let failure = RunManifest::read(dir).ok().and_then(|m| m.failure);
    RunManifest::write(dir, stage, hash, clock.elapsed().as_secs_f64(), failure)?;
    Ok(())
}

/// Energy budget, a-priori bounds and weak residuals for a run, or for every
/// member of a family plus the vanishing-K rates.
pub fn cmd_diagnose(dir: &Path) -> Result<CommandReport> {
    let clock = Instant::now();
    let mut report = CommandReport::default();
    if !is_family(dir) {
        let run = load_run(dir)?;
        report.outputs = diagnose_run(&run)?.0;
        refresh_manifest(dir, "diagnose", &config_hash(&run.config), clock)?;
        return Ok(report);
    }
    let fam = load_family(dir)?;
    report.warnings.extend(fam.warnings.iter().cloned());
    for run in &fam.runs {
        report.outputs.extend(diagnose_run(run)?.0);
        refresh_manifest(&run.dir, "diagnose", &config_hash(&run.config), clock)?;
    }
    if fam.manifest.parameter == SweepParameter::K {
        let records: Vec<&TrajectoryRecord> = fam.runs.iter().map(|r| &r.record).collect();
        let tests = fam.base.ym.test_family(fam.base.grid.extent);
        match vanishing_k_terms(&records, &tests.scalars(), &tests.vectors()) {
            Ok(rates) => {
                let path = dir.join("rates.csv");
                write_csv(
                    &path,
                    &["K", "term", "test", "value", "slope"],
                    rates.rows.iter().map(|r| {
                        let slope = rates
                            .fits
                            .iter()
                            .find(|f| f.term == r.term && f.member == r.member)
                            .map_or(f64::NAN, |f| f.slope);
                        vec![num(r.k), r.term.clone(), r.member.clone(), num(r.value), num(slope)]
                    }),
                )?;
                report.outputs.push(path);
            }
            Err(e) => report.warnings.push(format!("rates.csv skipped: {e}")),
        }
    } else {
        report.warnings.push("rates.csv needs a K family; skipped".into());
    }
    refresh_manifest(dir, "diagnose", &fam.manifest.base_config_hash, clock)?;
    Ok(report)
}

struct BuiltMeasure {
    fam: LoadedFamily,
    family: SolutionFamily,
    eym: crate::young_measure::EmpiricalYoungMeasure,
}

fn build_measure(dir: &Path) -> Result<BuiltMeasure> {
    let fam = load_family(dir)?;
    if fam.runs.is_empty() {
        return Err(Error::Family("family has no successful members".into()));
    }
    let p = fam.manifest.parameter;
    let members: Vec<Member> = fam
        .runs
        .iter()
        .map(|r| Member::from_record(p.label(&r.config), &r.record))
        .collect();
    let coarsest = fam.runs.iter().map(|r| r.config.grid.cells).min().unwrap_or(2);
    let lattice = Grid::new_1d(
        fam.base.ym.lattice_cells.unwrap_or(coarsest),
        fam.base.grid.extent,
        fam.base.grid.boundary,
    )?;
    let family = SolutionFamily::new(p.family_parameter(), members, lattice)?;
    let eym = build_empirical_measure(&family, fam.base.ym.points)?;
    Ok(BuiltMeasure { fam, family, eym })
}

/// Builds the empirical Young measure of a family and its defect estimates.
pub fn cmd_ym_build(dir: &Path) -> Result<CommandReport> {
    let clock = Instant::now();
    let built = build_measure(dir)?;
    let mut report = CommandReport {
        warnings: built.fam.warnings.clone(),
        ..Default::default()
    };
    let ym = dir.join("ym");
    let atoms = ym.join("atoms.bin");
    write_atoms(&atoms, &built.eym)?;
    report.outputs.push(atoms);
    match defects(&built) {
        Ok(d) => {
            let path = ym.join("defects.csv");
            write_defects_csv(&path, &d)?;
            report.outputs.push(path);
        }
        Err(e) => report.warnings.push(format!("defects.csv skipped: {e}")),
    }
    refresh_manifest(dir, "ym build", &built.fam.manifest.base_config_hash, clock)?;
    Ok(report)
}

fn defects(built: &BuiltMeasure) -> Result<crate::young_measure::DefectReport> {
    let finest = built.fam.runs.last().expect("non-empty family");
    let grid = finest.record.grid();
    let force = forcing(&finest.config, &grid)?;
    estimate_defects(
        &built.family,
        &built.eym,
        &finest.record.params,
        &built.fam.base.ym.test_family(grid.extent[0]),
        force.as_deref(),
    )
}

/// Runs the four measure-valued checks; failed checks are assertion failures.
pub fn cmd_ym_validate(dir: &Path) -> Result<CommandReport> {
    let clock = Instant::now();
    let built = build_measure(dir)?;
    let d = defects(&built)?;
    let c_p = match built.eym.lattice.bc {
        Boundary::NoSlip => poincare_constant(&built.eym.lattice)?,
        Boundary::Periodic => return Err(Error::Precondition("the spread check needs no-slip walls".into())),
    };
    let v = validate_dmv(&d, c_p, &built.fam.base.ym.tolerances());
    let mut report = CommandReport {
        warnings: built.fam.warnings.clone(),
        ..Default::default()
    };
    for c in v.checks.iter().filter(|c| !c.passed) {
        report.failures.push(format!("{} check failed (margin {:e}): {}", c.name, c.worst_margin, c.detail));
    }
    #[derive(Serialize)]
    struct Validation<'a> {
        c_p: f64,
        passed: bool,
        checks: &'a [crate::young_measure::DmvCheck],
    }
    let path = dir.join("ym").join("validation.json");
    write_atomic(
        &path,
        &json(&Validation {
            c_p,
            passed: v.all_passed(),
            checks: &v.checks,
        })?,
    )?;
    report.outputs.push(path);
    refresh_manifest(dir, "ym validate", &built.fam.manifest.base_config_hash, clock)?;
    Ok(report)
}

pub fn stability_config(cfg: &RunConfig, mode: StabilityMode) -> Result<StabilityConfig> {
    if cfg.grid.boundary != Boundary::NoSlip || (cfg.grid.extent - 1.0).abs() > 1e-12 {
        return Err(Error::Validation(vec![
            "wsu runs the built-in reference and needs a no-slip unit interval".into(),
        ]));
    }
    Ok(StabilityConfig {
        reference: Arc::new(TravellingWave),
        mu: cfg.model.mu,
        eta: cfg.model.eta,
        law: cfg.law()?,
        extent: cfg.grid.extent,
        ladder: cfg.stability.rungs(),
        t_end: cfg.time.t_end,
        snapshot_every: cfg.snapshot_every(),
        safety: cfg.time.safety,
        mode,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AmplitudeFit {
    pub amplitude: f64,
    pub lambda: Option<f64>,
    pub bound_holds: bool,
    pub switched_to_matched: bool,
    /// Smallest Gronwall rate of the finest member's relative energy.
    pub gronwall_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaSummary {
    pub mode: &'static str,
    pub passed: bool,
    pub failures: Vec<String>,
    pub fits: Vec<AmplitudeFit>,
    /// Largest over smallest fitted constant across amplitudes.
    pub lambda_spread: Option<f64>,
    pub matched_finals: Option<Vec<f64>>,
    pub matched_ratio: Option<f64>,
    pub matched_monotone: Option<bool>,
    pub reference_norms: crate::relative_energy::ReferenceNorms,
}

fn gronwall_rate(rep: &RelativeEnergyReport) -> f64 {
    let m = rep.members.last().expect("non-empty ladder");
    gronwall_envelope(&m.tau, &m.e_mv, 1e-12).rate
}

fn relener_rows(amplitude: f64, rep: &RelativeEnergyReport, rows: &mut Vec<Vec<String>>) {
    for m in &rep.members {
        for j in 0..m.tau.len() {
            let bound = rep.lambda.map_or(f64::NAN, |l| l * m.e_mv[0]);
            rows.push(vec![
                num(amplitude),
                num(m.k),
                m.cells.to_string(),
                num(m.tau[j]),
                num(m.e_mv[j]),
                num(m.d[j]),
                num(bound),
                num(m.grad_distance[j]),
            ]);
        }
    }
}

/// The weak-strong stability experiment. `matched` starts every rung on the
/// reference; otherwise every configured amplitude is run and the fitted
/// constants are compared.
pub fn cmd_wsu(cfg: &RunConfig, matched: bool, dir: &Path) -> Result<CommandReport> {
    let clock = Instant::now();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(CONFIG), cfg.to_toml().as_bytes())?;
    let modes: Vec<(f64, StabilityMode)> = if matched {
        vec![(0.0, StabilityMode::Matched)]
    } else {
        if cfg.stability.amplitudes.is_empty() {
            return Err(Error::Validation(vec!["stability.amplitudes is empty".into()]));
        }
        cfg.stability
            .amplitudes
            .iter()
            .map(|a| (*a, StabilityMode::Perturbed { amplitude: *a }))
            .collect()
    };
    let mut reports = Vec::new();
    for (a, mode) in &modes {
        reports.push((*a, stability_experiment(&stability_config(cfg, *mode)?)?));
    }
    let mut rows = Vec::new();
    for (a, r) in &reports {
        relener_rows(*a, r, &mut rows);
    }
    let relener = dir.join("relener.csv");
    write_csv(
        &relener,
        &["amplitude", "K", "cells", "tau", "E_mv", "D", "bound", "grad_distance"],
        rows,
    )?;

    let mut failures = Vec::new();
    let fits: Vec<AmplitudeFit> = reports
        .iter()
        .map(|(a, r)| AmplitudeFit {
            amplitude: *a,
            lambda: r.lambda,
            bound_holds: r.bound_holds(),
            switched_to_matched: r.switched_to_matched,
            gronwall_rate: gronwall_rate(r),
        })
        .collect();
    let mut summary = LambdaSummary {
        mode: if matched { "matched" } else { "perturbed" },
        passed: true,
        failures: Vec::new(),
        fits,
        lambda_spread: None,
        matched_finals: None,
        matched_ratio: None,
        matched_monotone: None,
        reference_norms: reports[0].1.reference_norms,
    };
    for (_, r) in &reports {
        if let Some(v) = &r.matched {
            if !v.monotone {
                failures.push(format!("E_mv + D is not monotone along the ladder: {:?}", v.finals));
            }
            if !(v.ratio >= cfg.stability.matched_ratio) {
                failures.push(format!(
                    "coarsest/finest ratio {:.3e} is below {}",
                    v.ratio, cfg.stability.matched_ratio
                ));
            }
            summary.matched_finals = Some(v.finals.clone());
            summary.matched_ratio = Some(v.ratio);
            summary.matched_monotone = Some(v.monotone);
        }
    }
    if !matched {
        let lambdas: Vec<f64> = summary.fits.iter().filter_map(|f| f.lambda).collect();
        for f in &summary.fits {
            match f.lambda {
                Some(l) if !l.is_finite() => failures.push(format!("amplitude {}: Lambda is not finite", f.amplitude)),
                Some(_) if !f.bound_holds => {
                    failures.push(format!("amplitude {}: bound E_mv + D <= Lambda E_mv(0) violated", f.amplitude))
                }
                _ => {}
            }
        }
        if lambdas.len() >= 2 {
            let hi = lambdas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
            let spread = hi / lo;
            summary.lambda_spread = Some(spread);
            if !(spread <= cfg.stability.lambda_spread) {
                failures.push(format!(
                    "Lambda varies by {spread:.3e}x across amplitudes (allowed {})",
                    cfg.stability.lambda_spread
                ));
            }
        }
    }
    summary.passed = failures.is_empty();
    summary.failures = failures.clone();
    let lambda = dir.join("lambda.json");
    write_atomic(&lambda, &json(&summary)?)?;
    RunManifest::write(dir, "wsu", &config_hash(cfg), clock.elapsed().as_secs_f64(), None)?;
    Ok(CommandReport {
        outputs: vec![relener, lambda],
        warnings: Vec::new(),
        failures,
    })
}

/// The five tables a report gathers, with where they are looked for.
const REPORT_TABLES: [(&str, &[&str]); 5] = [
    ("budget.csv", &["budget.csv"]),
    ("apriori.csv", &["apriori.csv"]),
    ("rates.csv", &["rates.csv"]),
    ("defects.csv", &["ym/defects.csv"]),
    ("relener.csv", &["relener.csv", "wsu/relener.csv"]),
];

fn member_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !is_family(dir) {
        return Ok(vec![(String::new(), dir.to_path_buf())]);
    }
    let fam: FamilyManifest = read_json(&dir.join(FAMILY))?;
    Ok(fam
        .members
        .iter()
        .filter(|m| m.ok)
        .map(|m| (num(m.value), dir.join(&m.dir)))
        .collect())
}

/// Gathers the pipeline's tables into `dir/report` with a summary listing
/// anything missing. Members of a family are merged with a leading column.
pub fn cmd_report(dir: &Path) -> Result<CommandReport> {
    let clock = Instant::now();
    if !dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", dir.display())));
    }
    let out = dir.join("report");
    let mut report = CommandReport::default();
    let mut summary = String::from("# Report\n\n| table | status |\n|---|---|\n");
    let members = member_dirs(dir)?;
    let family = is_family(dir);
    for (name, places) in REPORT_TABLES {
        let per_member = matches!(name, "budget.csv" | "apriori.csv");
        let mut header: Option<Vec<String>> = None;
        let mut rows: Vec<Vec<String>> = Vec::new();
        let sources: Vec<(String, PathBuf)> = if per_member {
            members.iter().map(|(v, d)| (v.clone(), d.join(places[0]))).collect()
        } else {
            places
                .iter()
                .map(|p| (String::new(), dir.join(p)))
                .filter(|(_, p)| p.exists())
                .take(1)
                .collect()
        };
        for (value, path) in &sources {
            if !path.exists() {
                continue;
            }
            let (h, r) = read_csv(path)?;
            if family && per_member {
                header.get_or_insert_with(|| std::iter::once("member".to_string()).chain(h).collect());
                rows.extend(r.into_iter().map(|row| std::iter::once(value.clone()).chain(row).collect()));
            } else {
                header.get_or_insert(h);
                rows.extend(r);
            }
        }
        match header {
            Some(h) => {
                let path = out.join(name);
                let cols: Vec<&str> = h.iter().map(String::as_str).collect();
                write_csv(&path, &cols, rows)?;
                summary.push_str(&format!("| {name} | present |\n"));
                report.outputs.push(path);
            }
            None => {
                let stage = match name {
                    "defects.csv" => "ym build",
                    "relener.csv" => "wsu",
                    _ => "diagnose",
                };
                summary.push_str(&format!("| {name} | missing (run `{stage}`) |\n"));
                report.warnings.push(format!("{name} missing; run `{stage}`"));
            }
        }
    }
    let md = out.join("summary.md");
    write_atomic(&md, summary.as_bytes())?;
    report.outputs.push(md);
    let hash = RunManifest::read(dir).map(|m| m.config_hash).unwrap_or_default();
    RunManifest::write(&out, "report", &hash, clock.elapsed().as_secs_f64(), None)?;
    Ok(report)
}

//! TOML run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::diagnostics::{TestFunctionFamily, TestFunctionKind};
use crate::error::{Error, Result};
use crate::mesh::{Boundary, Grid};
use crate::pressure::{validate_law, PressureLaw, PressureTable};
use crate::relative_energy::Rung;
use crate::solver::ModelParams;
use crate::young_measure::DmvTolerances;

fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_safety() -> f64 {
    0.4
}
fn default_points() -> usize {
    32
}
fn default_max_index() -> u32 {
    3
}
fn default_cap() -> f64 {
    100.0
}
fn default_dmv_tol() -> f64 {
    1e-8
}
fn default_ladder() -> Vec<RungConfig> {
    [(1e-1, 64), (1e-2, 128), (1e-3, 256), (1e-4, 512)]
        .into_iter()
        .map(|(k, cells)| RungConfig { k, cells })
        .collect()
}
fn default_amplitudes() -> Vec<f64> {
    vec![1e-2, 1e-3]
}
fn default_unit_mode() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Always on; `false` is rejected.
    #[serde(default = "yes")]
    pub deterministic: bool,
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub ym: YmConfig,
    #[serde(default)]
    pub stability: StabilityBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub cells: usize,
    #[serde(default = "one")]
    pub extent: f64,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
}

fn default_boundary() -> Boundary {
    Boundary::NoSlip
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mu: f64,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub k: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "two")]
    pub big_gamma: f64,
    #[serde(default)]
    pub pressure: PressureConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressureConfig {
    #[serde(default = "one")]
    pub a: f64,
    #[serde(default = "two")]
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableConfig>,
}

impl Default for PressureConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            gamma: 2.0,
            table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub density: Vec<f64>,
    pub pressure: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    #[serde(default = "default_safety")]
    pub safety: f64,
    /// Defaults to `t_end / 50`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingModel {
    /// Exact for the configured model, `K` and `delta` included.
    Model,
    /// Exact for plain Navier-Stokes with the configured `mu`, `eta`, law.
    NavierStokes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialConfig {
    /// The built-in travelling-wave reference with its manufactured forcing.
    Manufactured { forcing: ForcingModel },
    /// `rho = rho_mean + rho_amp cos(rho_mode pi x / L)`,
    /// `u = u_amp sin(u_mode pi x / L)`.
    Profile {
        #[serde(default = "one")]
        rho_mean: f64,
        #[serde(default)]
        rho_amp: f64,
        #[serde(default = "default_unit_mode")]
        rho_mode: u32,
        #[serde(default)]
        u_amp: f64,
        #[serde(default = "default_unit_mode")]
        u_mode: u32,
    },
    Rest {
        #[serde(default = "one")]
        density: f64,
    },
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig::Rest { density: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    Trig,
    Bubble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YmConfig {
    #[serde(default = "default_points")]
    pub points: usize,
    /// Defaults to the coarsest member grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice_cells: Option<usize>,
    #[serde(default = "default_tests")]
    pub tests: TestKind,
    #[serde(default = "default_max_index")]
    pub max_index: u32,
    #[serde(default = "default_cap")]
    pub chi_max: f64,
    #[serde(default = "default_cap")]
    pub xi_max: f64,
    #[serde(default = "default_dmv_tol")]
    pub tol_continuity: f64,
    #[serde(default = "default_dmv_tol")]
    pub tol_momentum: f64,
    #[serde(default = "default_dmv_tol")]
    pub tol_energy: f64,
    #[serde(default = "default_dmv_tol")]
    pub tol_poincare: f64,
}

fn default_tests() -> TestKind {
    TestKind::Trig
}

impl Default for YmConfig {
    fn default() -> Self {
        Self {
            points: 32,
            lattice_cells: None,
            tests: TestKind::Trig,
            max_index: 3,
            chi_max: 100.0,
            xi_max: 100.0,
            tol_continuity: 1e-8,
            tol_momentum: 1e-8,
            tol_energy: 1e-8,
            tol_poincare: 1e-8,
        }
    }
}

impl YmConfig {
    pub fn tolerances(&self) -> DmvTolerances {
        DmvTolerances {
            continuity: self.tol_continuity,
            momentum: self.tol_momentum,
            energy: self.tol_energy,
            poincare: self.tol_poincare,
            chi_max: self.chi_max,
            xi_max: self.xi_max,
        }
    }

    pub fn test_family(&self, extent: f64) -> TestFunctionFamily {
        let kind = match self.tests {
            TestKind::Trig => TestFunctionKind::TensorTrig,
            TestKind::Bubble => TestFunctionKind::PolynomialBubble,
        };
        TestFunctionFamily::new(kind, self.max_index, extent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RungConfig {
    pub k: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityBlock {
    #[serde(default = "default_ladder")]
    pub ladder: Vec<RungConfig>,
    #[serde(default = "default_amplitudes")]
    pub amplitudes: Vec<f64>,
    /// Largest admissible ratio between the fitted constants of two amplitudes.
    #[serde(default = "two")]
    pub lambda_spread: f64,
    /// Smallest admissible coarsest-over-finest ratio in the matched mode.
    #[serde(default = "default_matched_ratio")]
    pub matched_ratio: f64,
}

fn default_matched_ratio() -> f64 {
    10.0
}

impl Default for StabilityBlock {
    fn default() -> Self {
        Self {
            ladder: default_ladder(),
            amplitudes: default_amplitudes(),
            lambda_spread: 2.0,
            matched_ratio: 10.0,
        }
    }
}

impl StabilityBlock {
    pub fn rungs(&self) -> Vec<Rung> {
        self.ladder.iter().map(|r| Rung { k: r.k, cells: r.cells }).collect()
    }
}

impl RunConfig {
    pub fn law(&self) -> Result<PressureLaw> {
        let p = &self.model.pressure;
        Ok(match &p.table {
            Some(t) => PressureLaw::tabulated(PressureTable::new(t.density.clone(), t.pressure.clone())?),
            None => PressureLaw::power_law(p.a, p.gamma),
        })
    }

    pub fn params(&self) -> Result<ModelParams> {
        let m = &self.model;
        Ok(ModelParams {
            mu: m.mu,
            eta: m.eta,
            k: m.k,
            delta: m.delta,
            big_gamma: m.big_gamma,
            law: self.law()?,
        })
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new_1d(self.grid.cells, self.grid.extent, self.grid.boundary)
    }

    pub fn snapshot_every(&self) -> f64 {
        self.time.snapshot_every.unwrap_or(self.time.t_end / 50.0)
    }

    /// Every violated rule, in file order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !self.deterministic {
            v.push("deterministic = false is not supported; runs are always deterministic".into());
        }
        if self.grid.cells < 2 {
            v.push(format!("grid.cells = {} violates cells >= 2", self.grid.cells));
        }
        if !(self.grid.extent > 0.0 && self.grid.extent.is_finite()) {
            v.push(format!("grid.extent = {} violates extent > 0", self.grid.extent));
        }
        match self.params() {
            Ok(params) => {
                v.extend(params.violations().into_iter().map(|s| format!("model: {s}")));
                match validate_law(&params.law) {
                    Ok(rep) => {
                        for c in rep.clauses.iter().filter(|c| !c.passed && !LAW_PARAM_CLAUSES.contains(&c.clause)) {
                            v.push(format!("model.pressure: {} fails ({})", c.clause, c.detail));
                        }
                    }
                    Err(e) => v.push(format!("model.pressure: {e}")),
                }
            }
            Err(e) => v.push(format!("model.pressure.table: {e}")),
        }
        let t = &self.time;
        if !(t.t_end >= 0.0 && t.t_end.is_finite()) {
            v.push(format!("time.t_end = {} violates t_end >= 0", t.t_end));
        }
        if !(t.safety > 0.0 && t.safety <= 1.0) {
            v.push(format!("time.safety = {} violates 0 < safety <= 1", t.safety));
        }
        if let Some(s) = t.snapshot_every {
            if !(s > 0.0 && s.is_finite()) {
                v.push(format!("time.snapshot_every = {s} violates snapshot_every > 0"));
            }
        }
        match &self.initial {
            InitialConfig::Manufactured { .. } => {
                if self.grid.boundary != Boundary::NoSlip || (self.grid.extent - 1.0).abs() > 1e-12 {
                    v.push("initial.kind = \"manufactured\" needs a no-slip unit interval".into());
                }
            }
            InitialConfig::Profile {
                rho_mean, rho_amp, ..
            } => {
                if !(rho_mean - rho_amp.abs() > 0.0) {
                    v.push(format!(
                        "initial: rho_mean - |rho_amp| = {} violates positive density",
                        rho_mean - rho_amp.abs()
                    ));
                }
            }
            InitialConfig::Rest { density } => {
                if !(*density > 0.0 && density.is_finite()) {
                    v.push(format!("initial.density = {density} violates density > 0"));
                }
            }
        }
        let y = &self.ym;
        if y.points == 0 {
            v.push("ym.points = 0 violates points >= 1".into());
        }
        if y.lattice_cells.is_some_and(|c| c < 2) {
            v.push("ym.lattice_cells violates lattice_cells >= 2".into());
        }
        if y.max_index == 0 {
            v.push("ym.max_index = 0 violates max_index >= 1".into());
        }
        if !(y.chi_max > 0.0) || !(y.xi_max > 0.0) {
            v.push("ym.chi_max and ym.xi_max must be > 0".into());
        }
        for (name, tol) in [
            ("tol_continuity", y.tol_continuity),
            ("tol_momentum", y.tol_momentum),
            ("tol_energy", y.tol_energy),
            ("tol_poincare", y.tol_poincare),
        ] {
            if !(tol >= 0.0 && tol.is_finite()) {
                v.push(format!("ym.{name} = {tol} violates tol >= 0"));
            }
        }
        let s = &self.stability;
        if s.ladder.is_empty() {
            v.push("stability.ladder is empty".into());
        }
        for (i, r) in s.ladder.iter().enumerate() {
            if !(r.k >= 0.0 && r.k.is_finite()) {
                v.push(format!("stability.ladder[{i}].k = {} violates K >= 0", r.k));
            }
            if r.cells < 2 {
                v.push(format!("stability.ladder[{i}].cells = {} violates cells >= 2", r.cells));
            }
        }
        for a in &s.amplitudes {
            if !(*a >= 0.0 && *a < 1.0) {
                v.push(format!("stability.amplitudes entry {a} violates 0 <= amplitude < 1"));
            }
        }
        if !(s.lambda_spread >= 1.0) {
            v.push(format!("stability.lambda_spread = {} violates lambda_spread >= 1", s.lambda_spread));
        }
        if !(s.matched_ratio > 0.0) {
            v.push(format!("stability.matched_ratio = {} violates matched_ratio > 0", s.matched_ratio));
        }
        v
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Already covered by the model parameter rules.
const LAW_PARAM_CLAUSES: [&str; 2] = ["a > 0", "gamma >= 1"];

type Schema = &'static [&'static str];

const ROOT: Schema = &["output", "deterministic", "grid", "model", "time", "initial", "ym", "stability"];
const GRID: Schema = &["cells", "extent", "boundary"];
const MODEL: Schema = &["mu", "eta", "k", "delta", "big_gamma", "pressure"];
const PRESSURE: Schema = &["a", "gamma", "table"];
const TABLE: Schema = &["density", "pressure"];
const TIME: Schema = &["t_end", "safety", "snapshot_every"];
const MANUFACTURED: Schema = &["kind", "forcing"];
const PROFILE: Schema = &["kind", "rho_mean", "rho_amp", "rho_mode", "u_amp", "u_mode"];
const REST: Schema = &["kind", "density"];
const INITIAL_ANY: Schema = &["kind", "forcing", "rho_mean", "rho_amp", "rho_mode", "u_amp", "u_mode", "density"];
const YM: Schema = &[
    "points",
    "lattice_cells",
    "tests",
    "max_index",
    "chi_max",
    "xi_max",
    "tol_continuity",
    "tol_momentum",
    "tol_energy",
    "tol_poincare",
];
const STABILITY: Schema = &["ladder", "amplitudes", "lambda_spread", "matched_ratio"];
const RUNG: Schema = &["k", "cells"];

const VISCOSITY_WORDS: [&str; 3] = ["viscosity", "shear_viscosity", "bulk_viscosity"];

/// Close matches for an unknown key, best first.
fn suggest(key: &str, known: Schema) -> Vec<&'static str> {
    let lower = key.to_ascii_lowercase();
    if lower.contains("visc") || VISCOSITY_WORDS.iter().any(|w| strsim::levenshtein(&lower, w) <= 3) {
        let v: Vec<&str> = ["mu", "eta"].into_iter().filter(|k| known.contains(k)).collect();
        if !v.is_empty() {
            return v;
        }
    }
    let mut scored: Vec<(usize, &'static str)> = known
        .iter()
        .map(|k| (strsim::levenshtein(&lower, k), *k))
        .filter(|(d, k)| *d <= 2.max(k.len() / 3))
        .collect();
    scored.sort();
    scored.into_iter().map(|(_, k)| k).collect()
}

fn unknown_keys(table: &mut Table, known: Schema, path: &str, out: &mut Vec<String>) {
    let bad: Vec<String> = table.keys().filter(|k| !known.contains(&k.as_str())).cloned().collect();
    for key in bad {
        table.remove(&key);
        let at = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        let hint = suggest(&key, known);
        if hint.is_empty() {
            out.push(format!("unknown key `{at}`"));
        } else {
            let list: Vec<String> = hint.iter().map(|h| format!("`{h}`")).collect();
            out.push(format!("unknown key `{at}`; did you mean {}?", list.join(" or ")));
        }
    }
}

fn sub_table<'a>(table: &'a mut Table, key: &str) -> Option<&'a mut Table> {
    table.get_mut(key).and_then(Value::as_table_mut)
}

/// Removes every key not in the schema and reports it with suggestions.
fn strip_unknown(root: &mut Table) -> Vec<String> {
    let mut out = Vec::new();
    unknown_keys(root, ROOT, "", &mut out);
    for (name, schema) in [("grid", GRID), ("time", TIME), ("ym", YM)] {
        if let Some(t) = sub_table(root, name) {
            unknown_keys(t, schema, name, &mut out);
        }
    }
    if let Some(m) = sub_table(root, "model") {
        unknown_keys(m, MODEL, "model", &mut out);
        if let Some(p) = sub_table(m, "pressure") {
            unknown_keys(p, PRESSURE, "model.pressure", &mut out);
            if let Some(t) = sub_table(p, "table") {
                unknown_keys(t, TABLE, "model.pressure.table", &mut out);
            }
        }
    }
    if let Some(i) = sub_table(root, "initial") {
        let schema = match i.get("kind").and_then(Value::as_str) {
            Some("manufactured") => MANUFACTURED,
            Some("profile") => PROFILE,
            Some("rest") => REST,
            _ => INITIAL_ANY,
        };
        unknown_keys(i, schema, "initial", &mut out);
    }
    if let Some(s) = sub_table(root, "stability") {
        unknown_keys(s, STABILITY, "stability", &mut out);
        if let Some(Value::Array(rungs)) = s.get_mut("ladder") {
            for (n, r) in rungs.iter_mut().enumerate() {
                if let Some(t) = r.as_table_mut() {
                    unknown_keys(t, RUNG, &format!("stability.ladder[{n}]"), &mut out);
                }
            }
        }
    }
    out
}

/// Parses and validates a configuration, reporting every problem at once.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Validation(vec![format!("TOML syntax: {}", e.message())]))?;
    let mut problems = strip_unknown(&mut root);
    match RunConfig::deserialize(root) {
        Ok(cfg) => {
            problems.extend(cfg.violations());
            if problems.is_empty() {
                Ok(cfg)
            } else {
                Err(Error::Validation(problems))
            }
        }
        Err(e) => {
            problems.push(e.message().trim().to_string());
            Err(Error::Validation(problems))
        }
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[grid]\ncells = 64\n[model]\nmu = 0.1\n[time]\nt_end = 0.1\n";

    fn messages(text: &str) -> Vec<String> {
        match parse_config_str(text) {
            Err(Error::Validation(v)) => v,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.grid.extent, 1.0);
        assert_eq!(cfg.grid.boundary, Boundary::NoSlip);
        assert_eq!(cfg.model.eta, 0.0);
        assert_eq!(cfg.model.k, 0.0);
        assert_eq!(cfg.model.pressure.gamma, 2.0);
        assert_eq!(cfg.time.safety, 0.4);
        assert_eq!(cfg.initial, InitialConfig::Rest { density: 1.0 });
        assert!(cfg.deterministic);
        assert!((cfg.snapshot_every() - 0.002).abs() < 1e-15);
    }

    #[test]
    fn negative_mu_cites_the_rule() {
        let m = messages(&MINIMAL.replace("mu = 0.1", "mu = -1"));
        assert_eq!(m.len(), 1);
        assert!(m[0].contains("mu > 0") && m[0].contains("Newtonian stress"), "{m:?}");
    }

    #[test]
    fn misspelt_viscosity_suggests_mu_and_eta() {
        let m = messages(&MINIMAL.replace("mu = 0.1", "mu = 0.1\nviscocity = 0.2"));
        assert!(m[0].contains("model.viscocity") && m[0].contains("`mu`") && m[0].contains("`eta`"), "{m:?}");
    }

    #[test]
    fn all_violations_are_reported() {
        let text = "[grid]\ncells = 1\nextnet = 2\n[model]\nmu = -1\neta = -2\n[time]\nt_end = 0.1\nsafety = 3\n";
        let m = messages(text);
        assert!(m.len() >= 5, "{m:?}");
        assert!(m.iter().any(|s| s.contains("`extent`")));
    }

    #[test]
    fn missing_block_is_reported() {
        let m = messages("[grid]\ncells = 8\n[time]\nt_end = 1\n");
        assert!(m.iter().any(|s| s.contains("model")), "{m:?}");
    }

    #[test]
    fn round_trip_is_identity() {
        let text = format!(
            "{MINIMAL}[initial]\nkind = \"profile\"\nrho_amp = 0.3\nu_amp = 0.5\nu_mode = 2\n[ym]\nlattice_cells = 16\n"
        );
        let cfg = parse_config_str(&text).unwrap();
        let again = parse_config_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        let table = "[grid]\ncells = 8\n[model]\nmu = 1\n[model.pressure.table]\ndensity = [0.0, 1.0, 2.0]\npressure = [0.0, 1.0, 4.0]\n[time]\nt_end = 0.1\n[initial]\nkind = \"manufactured\"\nforcing = \"navier-stokes\"\n";
        let cfg = parse_config_str(table).unwrap();
        assert_eq!(cfg, parse_config_str(&cfg.to_toml()).unwrap());
    }

    #[test]
    fn manufactured_needs_unit_interval() {
        let m = messages(&format!("{}[initial]\nkind = \"manufactured\"\nforcing = \"model\"\n", MINIMAL.replace("cells = 64", "cells = 64\nextent = 2.0")));
        assert!(m[0].contains("unit interval"));
    }
}

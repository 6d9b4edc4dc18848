//! Barotropic pressure laws, the pressure potential and the Helmholtz
//! (Bregman) distance of the potential.
//!
//! The power law `p(s) = a s^gamma` is evaluated in closed form. A tabulated
//! law interpolates sampled pressures linearly and obtains the potential
//! `P(s) = s * int_1^s p(z)/z^2 dz` exactly on each linear piece.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampled pressure curve: strictly increasing densities with their pressures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureTable {
    pub density: Vec<f64>,
    pub pressure: Vec<f64>,
}

impl PressureTable {
    pub fn new(density: Vec<f64>, pressure: Vec<f64>) -> Result<Self> {
        if density.len() != pressure.len() {
            return Err(Error::SizeMismatch {
                expected: density.len(),
                got: pressure.len(),
            });
        }
        if density.len() < 2 {
            return Err(Error::Domain("pressure table needs at least two nodes".into()));
        }
        if density[0] != 0.0 {
            return Err(Error::Domain("pressure table must start at density 0".into()));
        }
        if density.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("pressure table densities must increase strictly".into()));
        }
        Ok(Self { density, pressure })
    }

    fn segment(&self, s: f64) -> usize {
        let n = self.density.len();
        match self.density.binary_search_by(|d| d.total_cmp(&s)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    fn slope(&self, k: usize) -> f64 {
        (self.pressure[k + 1] - self.pressure[k]) / (self.density[k + 1] - self.density[k])
    }

    fn eval(&self, s: f64) -> f64 {
        let k = self.segment(s);
        self.pressure[k] + self.slope(k) * (s - self.density[k])
    }

    fn eval_derivative(&self, s: f64) -> f64 {
        self.slope(self.segment(s))
    }

    /// `int_a^b p(z) / z^2 dz` for `a, b > 0`, exact on each linear piece.
    fn integral_over_square(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return -self.integral_over_square(b, a);
        }
        let n = self.density.len();
        let mut total = 0.0;
        let mut lo = a;
        while lo < b {
            let k = self.segment(lo);
            let end = if k + 1 < n - 1 { self.density[k + 1] } else { f64::INFINITY };
            let hi = end.min(b);
            let beta = self.slope(k);
            let alpha = self.pressure[k] - beta * self.density[k];
            total += alpha * (1.0 / lo - 1.0 / hi) + beta * (hi / lo).ln();
            lo = hi;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PressureMode {
    PowerLaw,
    Tabulated(PressureTable),
}

/// The pair `(p, P)` of a barotropic fluid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureLaw {
    pub a: f64,
    pub gamma: f64,
    pub mode: PressureMode,
}

impl PressureLaw {
    pub fn power_law(a: f64, gamma: f64) -> Self {
        Self {
            a,
            gamma,
            mode: PressureMode::PowerLaw,
        }
    }

    pub fn tabulated(table: PressureTable) -> Self {
        Self {
            a: 1.0,
            gamma: 1.0,
            mode: PressureMode::Tabulated(table),
        }
    }

    fn check_density(s: f64) -> Result<()> {
        if s.is_nan() || s < 0.0 {
            return Err(Error::Domain(format!("density must be >= 0, got {s}")));
        }
        Ok(())
    }

    /// `p(s)`.
    pub fn pressure(&self, s: f64) -> Result<f64> {
        Self::check_density(s)?;
        Ok(self.p(s))
    }

    /// `P(s)`, the pressure potential.
    pub fn pressure_potential(&self, s: f64) -> Result<f64> {
        Self::check_density(s)?;
        match &self.mode {
            PressureMode::PowerLaw => Ok(self.potential_closed(s)),
            PressureMode::Tabulated(t) => tabulated_potential(t, s),
        }
    }

    /// `P'(s)`.
    pub fn potential_derivative(&self, s: f64) -> Result<f64> {
        Self::check_density(s)?;
        match &self.mode {
            PressureMode::PowerLaw => Ok(self.potential_derivative_closed(s)),
            PressureMode::Tabulated(t) => {
                if s == 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                Ok(tabulated_potential(t, s)? / s + t.eval(s) / s)
            }
        }
    }

    /// `P(s) - P'(r)(s - r) - P(r)`.
    pub fn helmholtz_distance(&self, s: f64, r: f64) -> Result<f64> {
        if r.is_nan() || r <= 0.0 {
            return Err(Error::Domain(format!(
                "reference density must be > 0, got {r}"
            )));
        }
        Self::check_density(s)?;
        let ps = self.pressure_potential(s)?;
        let pr = self.pressure_potential(r)?;
        let dpr = self.potential_derivative(r)?;
        Ok(ps - dpr * (s - r) - pr)
    }

    /// `p(s)` without the domain check; callers guarantee `s >= 0`.
    #[inline]
    pub fn p(&self, s: f64) -> f64 {
        match &self.mode {
            PressureMode::PowerLaw => self.a * s.powf(self.gamma),
            PressureMode::Tabulated(t) => t.eval(s),
        }
    }

    /// `p'(s)` without the domain check.
    #[inline]
    pub fn dp(&self, s: f64) -> f64 {
        match &self.mode {
            PressureMode::PowerLaw => {
                if self.gamma == 1.0 {
                    self.a
                } else {
                    self.a * self.gamma * s.powf(self.gamma - 1.0)
                }
            }
            PressureMode::Tabulated(t) => t.eval_derivative(s),
        }
    }

    /// `P(s)` without the domain check.
    #[inline]
    pub fn potential(&self, s: f64) -> f64 {
        match &self.mode {
            PressureMode::PowerLaw => self.potential_closed(s),
            PressureMode::Tabulated(t) => tabulated_potential(t, s).unwrap_or(f64::NAN),
        }
    }

    /// `P'(s)` without the domain check.
    #[inline]
    pub fn dpotential(&self, s: f64) -> f64 {
        match &self.mode {
            PressureMode::PowerLaw => self.potential_derivative_closed(s),
            PressureMode::Tabulated(_) => self.potential_derivative(s).unwrap_or(f64::NAN),
        }
    }

    /// `P''(s) = p'(s) / s`.
    #[inline]
    pub fn d2potential(&self, s: f64) -> f64 {
        self.dp(s) / s
    }

    fn potential_closed(&self, s: f64) -> f64 {
        if self.gamma == 1.0 {
            if s == 0.0 {
                0.0
            } else {
                self.a * s * s.ln()
            }
        } else if s == 0.0 {
            0.0
        } else {
            self.a * s * self.log_ratio(s)
        }
    }

    /// `(s^(gamma-1) - 1) / (gamma - 1)` without cancellation near `gamma = 1`.
    fn log_ratio(&self, s: f64) -> f64 {
        ((self.gamma - 1.0) * s.ln()).exp_m1() / (self.gamma - 1.0)
    }

    fn potential_derivative_closed(&self, s: f64) -> f64 {
        if self.gamma == 1.0 {
            self.a * (s.ln() + 1.0)
        } else {
            self.a * (s.powf(self.gamma - 1.0) + self.log_ratio(s))
        }
    }

    /// Smallest `C` with `p(s) <= C P(s)` on a log-spaced sample of `[2, s_max]`.
    pub fn growth_constant(&self, s_max: f64) -> Result<f64> {
        let mut c: f64 = 0.0;
        for s in log_space(2.0, s_max, 61) {
            let p = self.pressure(s)?;
            let pp = self.pressure_potential(s)?;
            if pp <= 0.0 {
                return Ok(f64::INFINITY);
            }
            c = c.max(p / pp);
        }
        Ok(c)
    }

    /// Checks the coercivity hypotheses on a finite sample grid.
    pub fn validate(&self) -> Result<ValidationReport> {
        validate_law(self)
    }
}

fn tabulated_potential(t: &PressureTable, s: f64) -> Result<f64> {
    if s == 0.0 {
        return Ok(0.0);
    }
    Ok(s * t.integral_over_square(1.0, s))
}

pub(crate) fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// One clause of the coercivity hypotheses.
#[derive(Debug, Clone, Serialize)]
pub struct ClauseCheck {
    pub clause: &'static str,
    pub passed: bool,
    pub detail: String,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub clauses: Vec<ClauseCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn clause(&self, name: &str) -> Option<&ClauseCheck> {
        self.clauses.iter().find(|c| c.clause == name)
    }
}

/// Densities at which the liminf clauses are checked as monotone lower bounds.
pub const LIMINF_PROBES: [f64; 2] = [1e3, 1e6];

/// Half-width of the second-difference stencil relative to `s`. Tabulated
/// laws skip samples whose stencil contains a node, where `p'` jumps.
const STENCIL_REL: f64 = 2e-3;

/// Relative tolerance of the `P'' = p'/s` consistency clause.
pub const CONSISTENCY_RTOL: f64 = 1e-8;

pub fn validate_law(law: &PressureLaw) -> Result<ValidationReport> {
    let mut clauses = Vec::new();
    let finite = |s: f64, v: f64| -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite {
                what: "pressure law sample",
                index: 0,
                value: s,
            })
        }
    };

    if matches!(law.mode, PressureMode::PowerLaw) {
        clauses.push(ClauseCheck {
            clause: "a > 0",
            passed: law.a > 0.0,
            detail: format!("a = {}", law.a),
            samples: vec![],
        });
        clauses.push(ClauseCheck {
            clause: "gamma >= 1",
            passed: law.gamma >= 1.0,
            detail: format!("gamma = {}", law.gamma),
            samples: vec![],
        });
    }

    let p0 = finite(0.0, law.p(0.0))?;
    clauses.push(ClauseCheck {
        clause: "p(0) = 0",
        passed: p0 == 0.0,
        detail: format!("p(0) = {p0}"),
        samples: vec![0.0],
    });

    let grid = log_space(1e-6, 1e6, 121);
    let mut worst = f64::INFINITY;
    let mut worst_s = 0.0;
    for &s in &grid {
        let d = finite(s, law.dp(s))?;
        finite(s, law.p(s))?;
        if d < worst {
            worst = d;
            worst_s = s;
        }
    }
    clauses.push(ClauseCheck {
        clause: "p'(s) > 0",
        passed: worst > 0.0,
        detail: format!("min p' = {worst:e} at s = {worst_s:e}"),
        samples: grid.clone(),
    });

    let lo = finite(LIMINF_PROBES[0], law.dp(LIMINF_PROBES[0]))?;
    let hi = finite(LIMINF_PROBES[1], law.dp(LIMINF_PROBES[1]))?;
    clauses.push(ClauseCheck {
        clause: "liminf p'(s) > 0",
        passed: lo > 0.0 && hi >= lo * (1.0 - 1e-12),
        detail: format!("p'(1e3) = {lo:e}, p'(1e6) = {hi:e}"),
        samples: LIMINF_PROBES.to_vec(),
    });

    let ratio = |s: f64| -> Result<f64> {
        let pp = law.pressure_potential(s)?;
        finite(s, pp / law.p(s))
    };
    let rlo = ratio(LIMINF_PROBES[0])?;
    let rhi = ratio(LIMINF_PROBES[1])?;
    clauses.push(ClauseCheck {
        clause: "liminf P(s)/p(s) > 0",
        passed: rlo > 0.0 && rhi >= rlo * (1.0 - 1e-12),
        detail: format!("P/p(1e3) = {rlo:e}, P/p(1e6) = {rhi:e}"),
        samples: LIMINF_PROBES.to_vec(),
    });

    let consistency_grid: Vec<f64> = log_space(1e-2, 1e4, 31)
        .into_iter()
        .filter(|&s| match &law.mode {
            PressureMode::Tabulated(t) => !t.density.iter().any(|d| (d - s).abs() <= s * STENCIL_REL),
            _ => true,
        })
        .collect();
    let mut worst_rel: f64 = 0.0;
    for &s in &consistency_grid {
        let (fd, floor) = second_difference(|x| law.potential(x), s)?;
        let exact = finite(s, law.dp(s) / s)?;
        let rel = ((fd - exact).abs() - floor).max(0.0) / exact.abs().max(f64::MIN_POSITIVE);
        worst_rel = worst_rel.max(rel);
    }
    clauses.push(ClauseCheck {
        clause: "P''(s) = p'(s)/s",
        passed: worst_rel <= CONSISTENCY_RTOL,
        detail: format!("max relative deviation {worst_rel:e}"),
        samples: consistency_grid,
    });

    let c = law.growth_constant(1e6)?;
    clauses.push(ClauseCheck {
        clause: "p(s) <= C P(s) for s >= 2",
        passed: c.is_finite(),
        detail: format!("C = {c:e}"),
        samples: vec![2.0, 1e6],
    });

    Ok(ValidationReport { clauses })
}

/// Richardson-extrapolated central second difference and a bound on its
/// rounding error.
fn second_difference<F: Fn(f64) -> f64>(f: F, s: f64) -> Result<(f64, f64)> {
    let d2 = |h: f64| (f(s + h) - 2.0 * f(s) + f(s - h)) / (h * h);
    let h = s * STENCIL_REL;
    let coarse = d2(h);
    let fine = d2(0.5 * h);
    let v = (4.0 * fine - coarse) / 3.0;
    let scale = [s - h, s, s + h].iter().map(|x| f(*x).abs()).fold(0.0f64, f64::max);
    let floor = 64.0 * f64::EPSILON * scale / (h * h);
    if v.is_finite() {
        Ok((v, floor))
    } else {
        Err(Error::NonFinite {
            what: "potential second difference",
            index: 0,
            value: s,
        })
    }
}

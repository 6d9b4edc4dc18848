//! Adaptive Simpson quadrature with a running error estimate.

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 48;

/// Integrates `f` over `[a, b]` to the requested absolute tolerance.
///
/// Returns the estimated residual in the error when the recursion depth
/// is exhausted before the local error estimates meet the tolerance.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let fa = f(lo);
    let fb = f(hi);
    let m = 0.5 * (lo + hi);
    let fm = f(m);
    let whole = simpson(lo, hi, fa, fm, fb);
    let mut residual = 0.0;
    let value = recurse(&f, lo, hi, fa, fm, fb, whole, tol, MAX_DEPTH, &mut residual);
    if !value.is_finite() {
        return Err(Error::Quadrature {
            residual: f64::INFINITY,
        });
    }
    if residual > tol {
        return Err(Error::Quadrature { residual });
    }
    Ok(sign * value)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    residual: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || !delta.is_finite() {
        if depth == 0 && delta.abs() > 15.0 * tol {
            *residual += delta.abs() / 15.0;
        }
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, residual)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, residual)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = adaptive_simpson(|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 0.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let fwd = adaptive_simpson(f64::exp, 0.0, 1.0, 1e-12).unwrap();
        let back = adaptive_simpson(f64::exp, 1.0, 0.0, 1e-12).unwrap();
        assert!((fwd + back).abs() < 1e-14);
        assert!((fwd - (std::f64::consts::E - 1.0)).abs() < 1e-11);
    }

    #[test]
    fn non_integrable_reports_residual() {
        let err = adaptive_simpson(|x| 1.0 / (x * x), 1e-300, 1.0, 1e-12).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
    }
}

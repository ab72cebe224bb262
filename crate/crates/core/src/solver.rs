// SPDX-License-Identifier: Apache-2.0

//! Bracketed root finding.

use crate::error::{Error, Result};

/// Hard cap on bisection steps; 60 halvings shrink any f64 bracket below
/// one ulp of its endpoints.
pub const MAX_BISECTION_STEPS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Root {
    pub x: f64,
    pub steps: usize,
}

/// Bisection for a root of `f` in `[lo, hi]`, stopping once the bracket is
/// narrower than `tol`.
///
/// `f(lo)` and `f(hi)` must have opposite signs (infinities are allowed, so
/// log-domain balance functions work directly). The returned point is the
/// linear interpolation between the final bracket ends when both values are
/// finite, and the bracket midpoint otherwise.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<Root>
where
    F: FnMut(f64) -> f64,
{
    let mut f_lo = f(lo);
    let mut f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(Root { x: lo, steps: 0 });
    }
    if f_hi == 0.0 {
        return Ok(Root { x: hi, steps: 0 });
    }
    if f_lo.is_nan() || f_hi.is_nan() || f_lo.signum() == f_hi.signum() {
        return Err(Error::Convergence(format!(
            "no sign change on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}"
        )));
    }
    let mut steps = 0;
    while hi - lo > tol {
        if steps == MAX_BISECTION_STEPS {
            return Err(Error::Convergence(format!(
                "bisection did not reach tolerance {tol} in {MAX_BISECTION_STEPS} steps"
            )));
        }
        steps += 1;
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(Root { x: mid, steps });
        }
        if f_mid.is_nan() {
            return Err(Error::Convergence(format!("balance function is NaN at {mid}")));
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    let x = if f_lo.is_finite() && f_hi.is_finite() {
        lo + (hi - lo) * f_lo / (f_lo - f_hi)
    } else {
        0.5 * (lo + hi)
    };
    Ok(Root { x, steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_sqrt_two() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-9).unwrap();
        assert!((r.x - 2f64.sqrt()).abs() < 1e-9);
        assert!(r.steps <= MAX_BISECTION_STEPS);
    }

    #[test]
    fn rejects_missing_bracket() {
        assert!(matches!(
            bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-9),
            Err(Error::Convergence(_))
        ));
    }

    #[test]
    fn exact_midpoint_root() {
        let r = bisect(|x| x - 0.5, 0.0, 1.0, 1e-6).unwrap();
        assert_eq!(r.x, 0.5);
        assert_eq!(r.steps, 1);
    }

    #[test]
    fn infinite_endpoints() {
        let r = bisect(|x: f64| if x <= 0.0 { f64::NEG_INFINITY } else { x.ln() }, 0.0, 3.0, 1e-7)
            .unwrap();
        assert!((r.x - 1.0).abs() < 1e-7);
    }
}

//! Scalar root finding and maximization on bracketed intervals.

use crate::error::{CrmError, Result};

/// Bisection on `[lo, hi]` where `f(lo)` and `f(hi)` differ in sign.
/// Stops when the bracket is narrower than `xtol` or `f` vanishes.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, xtol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || flo.is_nan() || fhi.is_nan() {
        return Err(CrmError::RootFinding(format!("no sign change on [{lo}, {hi}]: f = ({flo}, {fhi})")));
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= xtol || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Newton's method kept inside a shrinking sign-change bracket, falling back
/// to bisection whenever a Newton step would leave the bracket or fails to
/// halve it. `fdf` returns `(f, f')`. Converges when `|f| < ftol` or the
/// bracket collapses to floating-point resolution.
pub fn newton_bracketed<F>(fdf: F, lo: f64, hi: f64, ftol: f64) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    let (flo, _) = fdf(lo);
    let (fhi, _) = fdf(hi);
    if flo.is_nan() || fhi.is_nan() {
        return Err(CrmError::RootFinding("NaN at bracket ends".into()));
    }
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(CrmError::RootFinding(format!("no sign change on [{lo}, {hi}]")));
    }
    // orient so that f(neg) < 0 < f(pos)
    let (mut neg, mut pos) = if flo < 0.0 { (lo, hi) } else { (hi, lo) };
    let mut x = 0.5 * (lo + hi);
    let mut step_prev = (hi - lo).abs();
    let mut step = step_prev;
    let (mut f, mut df) = fdf(x);
    for _ in 0..500 {
        if f.abs() < ftol {
            return Ok(x);
        }
        if f < 0.0 {
            neg = x;
        } else {
            pos = x;
        }
        let newton = x - f / df;
        let (a, b) = if neg < pos { (neg, pos) } else { (pos, neg) };
        let out_of_bracket = !(newton > a && newton < b) || !newton.is_finite();
        if out_of_bracket || (2.0 * f).abs() > (step_prev * df).abs() {
            step_prev = step;
            step = 0.5 * (b - a);
            x = a + step;
        } else {
            step_prev = step;
            step = (newton - x).abs();
            x = newton;
        }
        if (b - a) <= 4.0 * f64::EPSILON * x.abs().max(1e-300) {
            return Ok(x);
        }
        (f, df) = fdf(x);
        if f.is_nan() {
            return Err(CrmError::RootFinding(format!("NaN at x = {x}")));
        }
    }
    Ok(x)
}

/// Golden-section search for a maximum of a unimodal `f` on `[lo, hi]`.
pub fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, xtol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > xtol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
        if x1 >= x2 {
            break;
        }
    }
    0.5 * (lo + hi)
}

//! Bracketing bisection for monotone scalar functions.

/// Bisection on a bracket `[lo, hi]` for an increasing predicate.
///
/// `below(x)` must hold at `lo` and fail at `hi`; the returned pair keeps
/// that invariant and is narrower than `tol` (or 200 halvings were spent).
pub fn bisect_predicate(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    mut below: impl FnMut(f64) -> bool,
) -> (f64, f64) {
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// Finds `x` in `[lo, hi]` with `f(x) = target` for an increasing `f`.
/// Returns `None` when the target is not bracketed by `f(lo)`, `f(hi)`.
pub fn solve_increasing(
    lo: f64,
    hi: f64,
    target: f64,
    tol: f64,
    mut f: impl FnMut(f64) -> f64,
) -> Option<f64> {
    let (f_lo, f_hi) = (f(lo), f(hi));
    if !(f_lo <= target && target <= f_hi) {
        return None;
    }
    let (a, b) = bisect_predicate(lo, hi, tol, |x| f(x) <= target);
    Some(0.5 * (a + b))
}

//! Scalar root bracketing and one-dimensional maximization.

use crate::scalar::Real;

/// Iteration cap shared by the bracketing routines.
pub const MAX_ITER: usize = 200;

/// Smallest `x` in `[lo, hi]` with `f(x) <= target`, for `f` decreasing.
///
/// Requires `f(hi) <= target < f(lo)`. Halves the bracket until it is no
/// wider than `tol` and `f(hi)` lies within `rel_gap * target` of the target,
/// or until the bracket can no longer shrink. Returns the upper end, so the
/// result always satisfies the bound.
pub fn bisect_decreasing<T, F>(mut lo: T, mut hi: T, target: T, tol: T, rel_gap: T, f: F) -> T
where
    T: Real,
    F: Fn(T) -> T,
{
    let two = T::lit(2.0);
    let mut f_hi = f(hi);
    for _ in 0..MAX_ITER {
        let tight = hi - lo <= tol && f_hi >= target * (T::one() - rel_gap);
        if tight {
            break;
        }
        let mid = lo + (hi - lo) / two;
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid > target {
            lo = mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    hi
}

/// Golden-section search for a maximum of a unimodal `f` on `[a, b]`.
/// Returns `(x, f(x))` for the best point evaluated.
pub fn golden_section_max<T, F>(mut a: T, mut b: T, tol: T, f: F) -> (T, T)
where
    T: Real,
    F: Fn(T) -> T,
{
    let inv_phi = (T::lit(5.0).sqrt() - T::one()) / T::lit(2.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best = if fd > fc { (d, fd) } else { (c, fc) };
    for _ in 0..MAX_ITER {
        if b - a <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        for (x, fx) in [(c, fc), (d, fd)] {
            if fx > best.1 || (fx == best.1 && x < best.0) {
                best = (x, fx);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_finds_threshold() {
        let x = bisect_decreasing(0.0_f64, 10.0, 0.25, 1e-9, 1e-9, |x| (-x).exp());
        assert!((x - 4.0_f64.ln()).abs() < 1e-8);
        assert!((-x).exp() <= 0.25);
    }

    #[test]
    fn bisect_f32() {
        let x = bisect_decreasing(0.0_f32, 1.0, 0.5, 1e-6, 1e-4, |x| 1.0 - x);
        assert!((x - 0.5).abs() < 1e-5);
    }

    #[test]
    fn golden_section_parabola() {
        let (x, fx) = golden_section_max(0.0_f64, 3.0, 1e-10, |x| -(x - 1.3) * (x - 1.3) + 2.0);
        assert!((x - 1.3).abs() < 1e-6);
        assert!((fx - 2.0).abs() < 1e-12);
    }
}

//! Exponential helpers kept free of overflow.
//!
//! Every sphere integral of an exponential kernel reduces to
//! `e^{-a} sinh(s) / s` with `0 <= s <= a`. Evaluated literally this overflows
//! once `a` passes ~710, which happens for bandwidths below ~0.04, so the
//! product is rewritten with exponents that are never positive.

/// Below this argument `(1 - e^{-2s}) / (2s)` is evaluated by its Taylor series.
pub const SINHC_SERIES_THRESHOLD: f64 = 1e-4;

/// `exp` of anything below this is exactly zero in `f64`.
pub(crate) const EXP_UNDERFLOW: f64 = -745.2;

/// Above this `e^{-2s}` is below half an ulp of 1.
const DAMPING_SATURATES: f64 = 20.0;

/// `ln(1e-18)`: pair terms are dropped once their combined weight falls below
/// this fraction of the diagonal.
const NEGLIGIBLE_LOG: f64 = -41.45;

/// Gap below which a pair term is dropped from a sum whose diagonal is at
/// least `1 / scale` and which has at most `n²` terms bounded by `e^{gap}`.
#[inline]
pub(crate) fn negligible_gap(scale: f64) -> f64 {
    (NEGLIGIBLE_LOG - scale.ln()).max(EXP_UNDERFLOW)
}

/// `1 - e^{-x}`, accurate for small `x`.
#[inline]
pub fn one_minus_exp_neg(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// `(1 - e^{-2s}) / (2s)`, with the removable singularity at `s = 0` filled in.
#[inline]
pub fn damped_sinhc(s: f64) -> f64 {
    if s > DAMPING_SATURATES {
        0.5 / s
    } else if s < SINHC_SERIES_THRESHOLD {
        // 1 - s + 2s²/3 - s³/3 + 2s⁴/15
        1.0 + s * (-1.0 + s * (2.0 / 3.0 + s * (-1.0 / 3.0 + s * (2.0 / 15.0))))
    } else {
        one_minus_exp_neg(2.0 * s) / (2.0 * s)
    }
}

/// `e^{-a} sinh(s) / s` for `0 <= s <= a`, given the gap `s - a <= 0` directly.
///
/// Passing the gap separately lets callers form it without cancellation.
#[inline]
pub fn exp_sinhc_gap(s: f64, gap: f64) -> f64 {
    debug_assert!(gap <= 1e-9 * (1.0 + s.abs()), "gap must be nonpositive, got {gap}");
    if gap < EXP_UNDERFLOW {
        return 0.0;
    }
    gap.exp() * damped_sinhc(s)
}

/// `e^{-a} sinh(s) / s` for `0 <= s <= a`.
#[inline]
pub fn exp_sinhc(s: f64, a: f64) -> f64 {
    exp_sinhc_gap(s, (s - a).min(0.0))
}

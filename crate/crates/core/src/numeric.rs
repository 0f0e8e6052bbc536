//! Small numeric helpers used by several modules.

/// Largest `f64` strictly below 1.
pub(crate) const ONE_MINUS_EPS: f64 = 1.0 - f64::EPSILON / 2.0;

/// Numerically stable logistic function.
pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Logistic function clamped into the open interval (0, 1).
///
/// Plain `sigmoid` rounds to exactly 1.0 once `t` exceeds roughly 37, which
/// would break callers that take `log(p)` or `log(1 - p)`.
pub(crate) fn sigmoid_prob(t: f64) -> f64 {
    sigmoid(t).clamp(f64::MIN_POSITIVE, ONE_MINUS_EPS)
}

/// `ln(1 + exp(t))` without overflow for large `t`.
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

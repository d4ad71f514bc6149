//! Tolerance helpers shared by the bound checks.

/// Relative tolerance used by PSD classification and the whitening
/// precondition when the caller does not supply one.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// Relative slack applied to every analytic bound check. Covers the
/// floating-point error accumulated by whitening and quadratic forms.
pub const BOUND_REL_SLACK: f64 = 1e-9;

/// `lhs <= rhs` up to `rel` of the larger magnitude (never tighter than
/// `floor`, which callers set to the natural scale of the comparison).
pub(crate) fn leq_rel(lhs: f64, rhs: f64, rel: f64, floor: f64) -> bool {
    lhs - rhs <= rel * lhs.abs().max(rhs.abs()).max(floor)
}

/// `a == b` up to `rel` of the larger magnitude, with the same `floor`.
pub(crate) fn close_rel(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(floor)
}

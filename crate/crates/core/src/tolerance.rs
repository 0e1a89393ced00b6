//! Numerical thresholds shared by the solver, the certificates and the tests.

/// Curves whose minimum nodal speed drops below this fraction of the length are rejected.
pub const DEGENERACY_FLOOR: f64 = 1e-8;

/// Default target for the constant-speed projection.
pub const TOL_REPARAM: f64 = 1e-6;

/// Deviation above which a curve no longer counts as constant-speed.
pub const TOL_AC: f64 = 1e-4;

/// Per-step dissipation slack allowed by rounding.
pub const STEP_SLACK: f64 = 1e-10;

/// Slack for time-integrated energy inequalities and cumulative sums.
pub const WINDOW_SLACK: f64 = 1e-8;

/// Relative slack on the a-priori bounds (length sandwich, curvature integral).
pub const BOUND_SLACK: f64 = 1e-10;

/// Inner solver stops at this multiple of max(1, initial energy).
pub const INNER_TOL_FACTOR: f64 = 1e-6;

pub const INNER_MAX_ITERS: usize = 500;

pub const ARMIJO_C: f64 = 1e-4;

pub const BACKTRACK: f64 = 0.5;

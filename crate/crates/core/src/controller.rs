//! The per-vehicle sign control law.
//!
//! A vehicle sees two bearings in its own frame: `g_i` toward vehicle `i + 1`
//! and `-g_{i-1}` toward vehicle `i - 1`. It commands
//! `u_i = sgn(eps_i) (g_i - g_{i-1})`, which points along the bisector of its
//! angle and never exceeds speed 2.

use serde::{Deserialize, Serialize};

use crate::formation::{FormationState, TargetSpec};
use crate::geometry::{Bearing, Vec2};

/// Default error magnitude below which the sign is taken as zero.
pub const DEFAULT_DEADBAND: f64 = 1e-6;

/// What vehicle `i` measures, plus its (constant) target cosine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalMeasurement {
    /// Bearing toward vehicle `i + 1`, i.e. `g_i`.
    pub g_next: Bearing,
    /// Bearing toward vehicle `i - 1`, i.e. `-g_{i-1}`.
    pub g_prev_neg: Bearing,
    /// `cos(theta_i*)`.
    pub target_cos: f64,
}

/// Sign function with a symmetric deadband around zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignPolicy {
    pub deadband: f64,
}

impl Default for SignPolicy {
    fn default() -> Self {
        Self {
            deadband: DEFAULT_DEADBAND,
        }
    }
}

impl SignPolicy {
    /// # Panics
    /// If `deadband` is negative or NaN.
    pub fn new(deadband: f64) -> Self {
        assert!(deadband >= 0.0, "deadband must be >= 0, got {deadband}");
        Self { deadband }
    }

    /// `sgn(eps)` with `|eps| <= deadband` mapped to 0.
    pub fn sign(&self, eps: f64) -> f64 {
        if eps.abs() <= self.deadband {
            0.0
        } else {
            eps.signum()
        }
    }
}

/// `eps_i = <g_i, -g_{i-1}> - cos(theta_i*)`.
pub fn local_error(m: &LocalMeasurement) -> f64 {
    m.g_next.vec().dot(m.g_prev_neg.vec()) - m.target_cos
}

/// The commanded velocity of one vehicle.
pub fn control_velocity(m: &LocalMeasurement, policy: &SignPolicy) -> Vec2 {
    let s = policy.sign(local_error(m));
    if s == 0.0 {
        return Vec2::ZERO;
    }
    // g_i - g_{i-1} = g_next + g_prev_neg
    s * (m.g_next.vec() + m.g_prev_neg.vec())
}

/// Measurements of every vehicle in the global frame.
pub fn measurements(state: &FormationState, spec: &TargetSpec) -> Vec<LocalMeasurement> {
    measurements_from_bearings(&state.bearings(), spec.cosines())
}

pub(crate) fn measurements_from_bearings(
    g: &[Bearing],
    target_cos: &[f64],
) -> Vec<LocalMeasurement> {
    let n = g.len();
    (0..n)
        .map(|i| LocalMeasurement {
            g_next: g[i],
            g_prev_neg: -g[(i + n - 1) % n],
            target_cos: target_cos[i],
        })
        .collect()
}

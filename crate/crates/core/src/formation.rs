//! Ring formations: target angles, vehicle positions and everything derived
//! from them (edges, bearings, subtended angles, angle errors).
//!
//! Vehicle `i` senses vehicles `i - 1` and `i + 1` (indices modulo `n`).
//! Edge `e_i = z_{i+1} - z_i`, bearing `g_i = e_i / |e_i|`, and the angle
//! `theta_i` at vehicle `i` rotates `-g_{i-1}` counterclockwise onto `g_i`.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{FormationError, Result};
use crate::geometry::{subtended_angle, AngleRad, Bearing, Vec2, COLLOCATION_EPS};

/// Distance (rad) from 0 or pi below which a target angle violates the
/// non-collinearity assumption.
pub const ASSUMPTION_EPS: f64 = 1e-6;

/// Tolerance for matching the initial angle sum to the target angle sum.
pub const SUM_TOL: f64 = 1e-9;

/// Lower bound on relative edge length when solving for polygon closure.
const MIN_RELATIVE_LENGTH: f64 = 0.1;

/// Which open half of `[0, 2pi)` an angle lies in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `(0, pi)`
    Lower,
    /// `(pi, 2pi)`
    Upper,
}

impl Side {
    /// `None` when the angle is exactly 0 or pi.
    pub fn of(angle: AngleRad) -> Option<Side> {
        let a = angle.value();
        if a > 0.0 && a < PI {
            Some(Side::Lower)
        } else if a > PI && a < TAU {
            Some(Side::Upper)
        } else {
            None
        }
    }
}

/// The target angle of every vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    angles: Vec<AngleRad>,
    cosines: Vec<f64>,
}

impl TargetSpec {
    /// Builds a target from angles in radians (wrapped into `[0, 2pi)`).
    ///
    /// Only the structural invariants are enforced here; the collinearity
    /// assumption is reported by [`validate_feasibility`] so that a bad target
    /// can still be inspected.
    pub fn new(angles: impl IntoIterator<Item = f64>) -> Result<Self> {
        let angles: Vec<AngleRad> = angles
            .into_iter()
            .map(|a| {
                if a.is_finite() {
                    Ok(AngleRad::wrapped(a))
                } else {
                    Err(FormationError::InvalidInput(format!(
                        "non-finite target angle {a}"
                    )))
                }
            })
            .collect::<Result<_>>()?;
        if angles.len() < 3 {
            return Err(FormationError::InvalidInput(format!(
                "a ring needs at least 3 vehicles, got {}",
                angles.len()
            )));
        }
        let cosines = angles.iter().map(|a| a.value().cos()).collect();
        Ok(Self { angles, cosines })
    }

    pub fn from_degrees(degrees: &[f64]) -> Result<Self> {
        Self::new(degrees.iter().map(|d| d.to_radians()))
    }

    pub fn uniform(n: usize, angle: f64) -> Result<Self> {
        Self::new(std::iter::repeat_n(angle, n))
    }

    pub fn n(&self) -> usize {
        self.angles.len()
    }

    pub fn angles(&self) -> &[AngleRad] {
        &self.angles
    }

    /// `cos(theta_i*)` for every vehicle.
    pub fn cosines(&self) -> &[f64] {
        &self.cosines
    }

    pub fn angle_sum(&self) -> f64 {
        self.angles.iter().map(|a| a.value()).sum()
    }

    /// Indices whose target is within [`ASSUMPTION_EPS`] of 0 or pi.
    pub fn collinear_targets(&self) -> Vec<usize> {
        self.angles
            .iter()
            .enumerate()
            .filter(|(_, a)| {
                let v = a.value();
                v.min(TAU - v) <= ASSUMPTION_EPS || (v - PI).abs() <= ASSUMPTION_EPS
            })
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sides(&self) -> Vec<Option<Side>> {
        self.angles.iter().map(|&a| Side::of(a)).collect()
    }
}

/// Positions of the `n` vehicles of the ring. Immutable once built; no two
/// vehicles are collocated.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationState {
    positions: Vec<Vec2>,
}

impl FormationState {
    pub fn new(positions: Vec<Vec2>) -> Result<Self> {
        if positions.len() < 3 {
            return Err(FormationError::InvalidInput(format!(
                "a ring needs at least 3 vehicles, got {}",
                positions.len()
            )));
        }
        if let Some(i) = positions.iter().position(|p| !p.is_finite()) {
            return Err(FormationError::InvalidInput(format!(
                "position of vehicle {} is not finite",
                i + 1
            )));
        }
        let (distance, i, j) = min_pairwise(&positions);
        if distance <= COLLOCATION_EPS {
            return Err(FormationError::CollocatedVehicles { i, j, distance });
        }
        Ok(Self { positions })
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<Vec2> {
        self.positions
    }

    /// `e_i = z_{i+1} - z_i`.
    pub fn edges(&self) -> Vec<Vec2> {
        let n = self.n();
        (0..n)
            .map(|i| self.positions[(i + 1) % n] - self.positions[i])
            .collect()
    }

    pub fn edge_lengths(&self) -> Vec<f64> {
        self.edges().into_iter().map(Vec2::norm).collect()
    }

    /// Sum of edge lengths (the ring's perimeter).
    pub fn perimeter(&self) -> f64 {
        self.edge_lengths().iter().sum()
    }

    /// `g_i = e_i / |e_i|`.
    pub fn bearings(&self) -> Vec<Bearing> {
        self.edges()
            .into_iter()
            .map(|e| Bearing::new(e).expect("non-collocated ring has nonzero edges"))
            .collect()
    }

    /// Subtended angle `theta_i` at every vehicle.
    pub fn angles(&self) -> Vec<AngleRad> {
        let g = self.bearings();
        let n = g.len();
        (0..n)
            .map(|i| subtended_angle(g[i], g[(i + n - 1) % n]))
            .collect()
    }

    /// Minimum distance over all vehicle pairs, with the (0-based) pair.
    pub fn min_pairwise_distance(&self) -> (f64, usize, usize) {
        min_pairwise(&self.positions)
    }
}

pub(crate) fn min_pairwise(positions: &[Vec2]) -> (f64, usize, usize) {
    let mut best = (f64::INFINITY, 0, 0);
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            let d = positions[i].distance(positions[j]);
            if d < best.0 {
                best = (d, i, j);
            }
        }
    }
    best
}

fn check_size(state: &FormationState, spec: &TargetSpec) -> Result<()> {
    if state.n() != spec.n() {
        return Err(FormationError::InvalidInput(format!(
            "state has {} vehicles but target has {}",
            state.n(),
            spec.n()
        )));
    }
    Ok(())
}

/// Angle errors from bearings: `eps_i = -<g_i, g_{i-1}> - cos(theta_i*)`.
pub(crate) fn errors_from_bearings(g: &[Bearing], target_cos: &[f64]) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|i| -g[i].vec().dot(g[(i + n - 1) % n].vec()) - target_cos[i])
        .collect()
}

/// Angle errors `eps_i = cos(theta_i) - cos(theta_i*)`.
pub fn errors(state: &FormationState, spec: &TargetSpec) -> Result<Vec<f64>> {
    check_size(state, spec)?;
    Ok(errors_from_bearings(&state.bearings(), spec.cosines()))
}

/// Sum of the subtended angles, unwrapped.
pub fn angle_sum(state: &FormationState) -> f64 {
    state.angles().iter().map(|a| a.value()).sum()
}

/// Outcome of the pre-run feasibility checks. Never fails; problems are
/// reported through the flags and `warnings`.
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub initial_angle_sum: f64,
    pub target_angle_sum: f64,
    pub sum_residual: f64,
    pub sum_ok: bool,
    /// 0-based indices of targets too close to 0 or pi.
    pub collinear_targets: Vec<usize>,
    pub assumption_ok: bool,
    /// Per vehicle: initial and target angle lie in the same open half.
    pub side_ok: Vec<bool>,
    pub warnings: Vec<String>,
}

impl FeasibilityReport {
    pub fn sides_ok(&self) -> bool {
        !self.side_ok.is_empty() && self.side_ok.iter().all(|&ok| ok)
    }

    pub fn passes(&self) -> bool {
        self.sum_ok && self.assumption_ok && self.sides_ok()
    }
}

pub fn validate_feasibility(state0: &FormationState, spec: &TargetSpec) -> FeasibilityReport {
    let mut warnings = Vec::new();
    let target_angle_sum = spec.angle_sum();
    let collinear_targets = spec.collinear_targets();
    let assumption_ok = collinear_targets.is_empty();
    for &i in &collinear_targets {
        warnings.push(format!(
            "target angle of vehicle {} ({:.6} deg) is collinear",
            i + 1,
            spec.angles()[i].degrees()
        ));
    }

    if state0.n() != spec.n() {
        warnings.push(format!(
            "state has {} vehicles but target has {}",
            state0.n(),
            spec.n()
        ));
        return FeasibilityReport {
            initial_angle_sum: angle_sum(state0),
            target_angle_sum,
            sum_residual: f64::NAN,
            sum_ok: false,
            collinear_targets,
            assumption_ok,
            side_ok: vec![false; spec.n()],
            warnings,
        };
    }

    let angles = state0.angles();
    let initial_angle_sum: f64 = angles.iter().map(|a| a.value()).sum();
    let sum_residual = initial_angle_sum - target_angle_sum;
    let sum_ok = sum_residual.abs() <= SUM_TOL;
    if !sum_ok {
        warnings.push(format!(
            "angle sum {initial_angle_sum:.12} differs from target sum {target_angle_sum:.12} by {sum_residual:.3e}"
        ));
    }

    let side_ok: Vec<bool> = angles
        .iter()
        .zip(spec.angles())
        .map(|(&a, &t)| matches!((Side::of(a), Side::of(t)), (Some(x), Some(y)) if x == y))
        .collect();
    for (i, ok) in side_ok.iter().enumerate() {
        if !ok {
            warnings.push(format!(
                "vehicle {}: initial angle {:.4} deg and target {:.4} deg are not in the same half (0,180)/(180,360)",
                i + 1,
                angles[i].degrees(),
                spec.angles()[i].degrees()
            ));
        }
    }

    FeasibilityReport {
        initial_angle_sum,
        target_angle_sum,
        sum_residual,
        sum_ok,
        collinear_targets,
        assumption_ok,
        side_ok,
        warnings,
    }
}

fn wrap_to_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Builds positions that realize `spec` with shortest edge equal to `scale`.
///
/// Edge headings follow `heading(g_i) = heading(g_{i-1}) + pi + theta_i`;
/// edge lengths solve the closure `sum l_i g_i = 0` with `l_i >= 0.1 min(l)`.
/// Equal lengths are tried first.
pub fn realize_target(spec: &TargetSpec, scale: f64) -> Result<FormationState> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(FormationError::InvalidInput(format!(
            "scale must be positive, got {scale}"
        )));
    }
    let collinear = spec.collinear_targets();
    if !collinear.is_empty() {
        return Err(FormationError::InfeasibleTarget(format!(
            "target angles at vehicles {:?} are collinear",
            collinear.iter().map(|i| i + 1).collect::<Vec<_>>()
        )));
    }
    let n = spec.n();
    let theta = spec.angles();

    let mut headings = vec![0.0; n];
    for i in 1..n {
        headings[i] = headings[i - 1] + PI + theta[i].value();
    }
    let turn = wrap_to_pi(headings[n - 1] + PI + theta[0].value() - headings[0]);
    if turn.abs() > 1e-8 {
        return Err(FormationError::InfeasibleTarget(format!(
            "edge headings do not close: n*pi + sum(theta*) is off a multiple of 2pi by {turn:.3e} rad"
        )));
    }
    let g: Vec<Bearing> = headings.iter().map(|&h| Bearing::from_heading(h)).collect();

    let lengths = closure_lengths(&g)?;
    let shortest = lengths.iter().cloned().fold(f64::INFINITY, f64::min);
    let lengths: Vec<f64> = lengths.iter().map(|l| l * scale / shortest).collect();

    let mut positions = Vec::with_capacity(n);
    let mut z = Vec2::ZERO;
    for i in 0..n {
        positions.push(z);
        z += lengths[i] * g[i].vec();
    }
    let residual = z.norm();
    if residual > 1e-8 * scale.max(1.0) {
        return Err(FormationError::InfeasibleTarget(format!(
            "closure residual {residual:.3e} after solve"
        )));
    }
    let state = FormationState::new(positions).map_err(|e| match e {
        FormationError::CollocatedVehicles { i, j, .. } => {
            FormationError::InfeasibleTarget(format!(
                "realization places vehicles {} and {} on top of each other",
                i + 1,
                j + 1
            ))
        }
        other => other,
    })?;

    let realized = state.angles();
    for (i, (a, t)) in realized.iter().zip(theta).enumerate() {
        let diff = wrap_to_pi(a.value() - t.value());
        if diff.abs() > 1e-8 {
            return Err(FormationError::InfeasibleTarget(format!(
                "realized angle at vehicle {} off by {diff:.3e} rad",
                i + 1
            )));
        }
    }
    Ok(state)
}

/// Positive edge lengths with `sum l_i g_i = 0`, normalized to mean 1.
fn closure_lengths(g: &[Bearing]) -> Result<Vec<f64>> {
    let n = g.len();
    let residual = |l: &[f64]| -> f64 {
        l.iter()
            .zip(g)
            .fold(Vec2::ZERO, |acc, (&li, gi)| acc + li * gi.vec())
            .norm()
    };
    let equal = vec![1.0; n];
    if residual(&equal) <= 1e-12 * n as f64 {
        return Ok(equal);
    }

    // Alternating projections between the affine set
    // {G l = 0, 1^T l = n} and the box {l >= MIN_RELATIVE_LENGTH}.
    let m = DMatrix::from_fn(3, n, |r, c| match r {
        0 => g[c].vec().x,
        1 => g[c].vec().y,
        _ => 1.0,
    });
    let gram_inv = (&m * m.transpose()).try_inverse().ok_or_else(|| {
        FormationError::InfeasibleTarget("edge directions do not span the plane".into())
    })?;
    let rhs = DVector::from_vec(vec![0.0, 0.0, n as f64]);
    let project_affine =
        |l: &DVector<f64>| -> DVector<f64> { l - m.transpose() * (&gram_inv * (&m * l - &rhs)) };

    let mut l = DVector::from_element(n, 1.0);
    for _ in 0..20_000 {
        l = project_affine(&l);
        if l.min() >= MIN_RELATIVE_LENGTH * (1.0 - 1e-9) {
            return Ok(l.iter().copied().collect());
        }
        l.apply(|x| *x = x.max(MIN_RELATIVE_LENGTH));
    }
    Err(FormationError::InfeasibleTarget(
        "no closure with positive edge lengths".into(),
    ))
}

/// Moves every vehicle by an independent uniform sample from the disk of
/// radius `magnitude`. Deterministic in `seed`.
pub fn perturb(state: &FormationState, magnitude: f64, seed: u64) -> Result<FormationState> {
    if !(magnitude.is_finite() && magnitude >= 0.0) {
        return Err(FormationError::InvalidInput(format!(
            "perturbation magnitude must be >= 0, got {magnitude}"
        )));
    }
    if magnitude == 0.0 {
        return Ok(state.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = state
        .positions()
        .iter()
        .map(|&p| {
            let r = magnitude * rng.random::<f64>().sqrt();
            let phi = TAU * rng.random::<f64>();
            p + r * Bearing::from_heading(phi).vec()
        })
        .collect();
    FormationState::new(positions)
}

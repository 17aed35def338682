//! Closed-loop integration of the ring under the sign control law.
//!
//! Integration schemes implement [`Stepper`] and are looked up by name, so a
//! scenario file or the CLI can pick one at runtime. Two are registered:
//!
//! * `euler`: plain synchronous explicit Euler with step `dt`. Under a sign
//!   law it chatters around each switching surface with amplitude `O(dt)`.
//! * `switch-euler` (default): the same synchronous Euler update, but a step
//!   is cut short when an active error would cross zero, landing it inside
//!   the deadband. Velocities are always `control_velocity` evaluated at the
//!   start of the (sub)step.
//!
//! Samples are recorded on the fixed grid `t_k = k dt`.

use std::fmt;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::analysis::lyapunov;
use crate::controller::{
    control_velocity, measurements_from_bearings, SignPolicy, DEFAULT_DEADBAND,
};
use crate::error::{FormationError, Result};
use crate::formation::{
    errors_from_bearings, min_pairwise, validate_feasibility, FormationState, TargetSpec,
};
use crate::geometry::{Bearing, Vec2, COLLOCATION_EPS};

pub const DEFAULT_STEPPER: &str = "switch-euler";

/// Relative collision floor used when the config leaves it unset.
pub const DEFAULT_FLOOR_FRACTION: f64 = 1e-3;

/// Total vehicle-samples above which the record is decimated.
const RECORD_BUDGET: f64 = 1e6;

fn default_dt() -> f64 {
    1e-3
}
fn default_t_max() -> f64 {
    20.0
}
fn default_tol() -> f64 {
    1e-3
}
fn default_deadband() -> f64 {
    DEFAULT_DEADBAND
}
fn default_settle() -> f64 {
    0.5
}
fn default_stepper() -> String {
    DEFAULT_STEPPER.to_string()
}
fn default_max_substeps() -> usize {
    100_000
}

/// Simulation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Convergence is declared once `V(eps) <= convergence_tol`.
    #[serde(default = "default_tol")]
    pub convergence_tol: f64,
    #[serde(default = "default_deadband")]
    pub deadband: f64,
    /// Minimum allowed pairwise distance. Unset means `1e-3` times the
    /// initial minimum distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collision_floor: Option<f64>,
    /// Default seed for generated initial conditions.
    #[serde(default)]
    pub seed: u64,
    /// How long to keep integrating after convergence.
    #[serde(default = "default_settle")]
    pub settle_time: f64,
    /// Record every k-th grid sample. Unset picks a value that keeps the
    /// record under ~1e6 vehicle-samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    #[serde(default = "default_stepper")]
    pub stepper: String,
    /// Cap on substeps within one grid step for `switch-euler`.
    #[serde(default = "default_max_substeps")]
    pub max_substeps: usize,
    /// Run even when the feasibility checks fail.
    #[serde(skip)]
    pub force: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            t_max: default_t_max(),
            convergence_tol: default_tol(),
            deadband: default_deadband(),
            collision_floor: None,
            seed: 0,
            settle_time: default_settle(),
            record_every: None,
            stepper: default_stepper(),
            max_substeps: default_max_substeps(),
            force: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FormationError::InvalidInput(msg));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return bad(format!("t_max must be > 0, got {}", self.t_max));
        }
        if self.convergence_tol.is_nan() || self.convergence_tol <= 0.0 {
            return bad(format!(
                "convergence_tol must be > 0, got {}",
                self.convergence_tol
            ));
        }
        if self.deadband.is_nan() || self.deadband < 0.0 {
            return bad(format!("deadband must be >= 0, got {}", self.deadband));
        }
        if self.settle_time.is_nan() || self.settle_time < 0.0 {
            return bad(format!(
                "settle_time must be >= 0, got {}",
                self.settle_time
            ));
        }
        if let Some(floor) = self.collision_floor {
            if floor.is_nan() || floor < COLLOCATION_EPS {
                return bad(format!(
                    "collision_floor must be >= {COLLOCATION_EPS:e}, got {floor}"
                ));
            }
        }
        if self.record_every == Some(0) {
            return bad("record_every must be >= 1".into());
        }
        if self.max_substeps == 0 {
            return bad("max_substeps must be >= 1".into());
        }
        stepper_by_name(&self.stepper)?;
        Ok(())
    }

    pub fn policy(&self) -> SignPolicy {
        SignPolicy::new(self.deadband)
    }

    /// The configured floor, or `1e-3` of the state's minimum distance.
    pub fn collision_floor_for(&self, state: &FormationState) -> f64 {
        self.collision_floor.unwrap_or_else(|| {
            (DEFAULT_FLOOR_FRACTION * state.min_pairwise_distance().0).max(COLLOCATION_EPS)
        })
    }
}

/// Earliest time at which two vehicles could collide: each moves at speed at
/// most 2, so a pair closes at most at speed 4.
pub fn collision_horizon(state0: &FormationState) -> f64 {
    state0.min_pairwise_distance().0 / 4.0
}

/// Result of advancing positions over one grid step.
#[derive(Debug, Clone)]
pub struct Advance {
    pub positions: Vec<Vec2>,
    /// Number of Euler updates used (1 when no switch was located).
    pub substeps: usize,
}

/// A fixed-grid integration scheme for the closed loop.
pub trait Stepper: Send + Sync {
    fn name(&self) -> &'static str;

    /// Advances `positions` by exactly `dt`.
    fn advance(
        &self,
        positions: &[Vec2],
        target_cos: &[f64],
        policy: &SignPolicy,
        dt: f64,
        max_substeps: usize,
    ) -> Result<Advance>;
}

impl fmt::Debug for dyn Stepper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

type StepperCtor = fn() -> Box<dyn Stepper>;

static STEPPERS: &[(&str, StepperCtor)] = &[
    ("euler", || Box::new(ExplicitEuler)),
    ("switch-euler", || Box::new(SwitchLocatingEuler)),
];

/// Names accepted by [`stepper_by_name`].
pub fn available_steppers() -> impl Iterator<Item = &'static str> {
    STEPPERS.iter().map(|(name, _)| *name)
}

pub fn stepper_by_name(name: &str) -> Result<Box<dyn Stepper>> {
    STEPPERS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, ctor)| ctor())
        .ok_or_else(|| FormationError::UnknownStepper(name.to_string()))
}

fn ring_bearings(positions: &[Vec2]) -> Result<Vec<Bearing>> {
    let n = positions.len();
    (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            let e = positions[j] - positions[i];
            if e.norm() <= COLLOCATION_EPS {
                return Err(FormationError::CollocatedVehicles {
                    i,
                    j,
                    distance: e.norm(),
                });
            }
            Ok(Bearing::new(e).expect("nonzero edge"))
        })
        .collect()
}

fn ring_errors(positions: &[Vec2], target_cos: &[f64]) -> Result<Vec<f64>> {
    Ok(errors_from_bearings(&ring_bearings(positions)?, target_cos))
}

fn ring_velocities(
    positions: &[Vec2],
    target_cos: &[f64],
    policy: &SignPolicy,
) -> Result<Vec<Vec2>> {
    let g = ring_bearings(positions)?;
    Ok(measurements_from_bearings(&g, target_cos)
        .iter()
        .map(|m| control_velocity(m, policy))
        .collect())
}

fn displaced(positions: &[Vec2], velocities: &[Vec2], h: f64) -> Vec<Vec2> {
    positions
        .iter()
        .zip(velocities)
        .map(|(&z, &u)| z + h * u)
        .collect()
}

/// Plain synchronous explicit Euler.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExplicitEuler;

impl Stepper for ExplicitEuler {
    fn name(&self) -> &'static str {
        "euler"
    }

    fn advance(
        &self,
        positions: &[Vec2],
        target_cos: &[f64],
        policy: &SignPolicy,
        dt: f64,
        _max_substeps: usize,
    ) -> Result<Advance> {
        let u = ring_velocities(positions, target_cos, policy)?;
        Ok(Advance {
            positions: displaced(positions, &u, dt),
            substeps: 1,
        })
    }
}

/// Explicit Euler that shortens a step at the first zero crossing of an
/// active error and lands that error inside the deadband.
///
/// An error is active when its sign is nonzero. A crossing at step length
/// `h` means `s_i eps_i(z + h u) <= deadband / 2` for some active `i`; the
/// first such `h` is found by bisection and refined until every triggered
/// error sits inside `[-deadband/2, deadband/2]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SwitchLocatingEuler;

impl SwitchLocatingEuler {
    const BISECTION_LIMIT: usize = 200;
}

impl Stepper for SwitchLocatingEuler {
    fn name(&self) -> &'static str {
        "switch-euler"
    }

    fn advance(
        &self,
        positions: &[Vec2],
        target_cos: &[f64],
        policy: &SignPolicy,
        dt: f64,
        max_substeps: usize,
    ) -> Result<Advance> {
        let land = 0.5 * policy.deadband;
        let mut z = positions.to_vec();
        let mut remaining = dt;
        let mut substeps = 0;

        while remaining > 0.0 {
            if substeps >= max_substeps {
                warn!(
                    "switch location gave up after {substeps} substeps; finishing {remaining:e} with plain Euler"
                );
                let u = ring_velocities(&z, target_cos, policy)?;
                z = displaced(&z, &u, remaining);
                substeps += 1;
                break;
            }

            let g = ring_bearings(&z)?;
            let eps = errors_from_bearings(&g, target_cos);
            let signs: Vec<f64> = eps.iter().map(|&e| policy.sign(e)).collect();
            if signs.iter().all(|&s| s == 0.0) {
                break;
            }
            let u: Vec<Vec2> = measurements_from_bearings(&g, target_cos)
                .iter()
                .map(|m| control_velocity(m, policy))
                .collect();

            let crossed = |h: f64| -> Result<(bool, Vec<f64>)> {
                let e = ring_errors(&displaced(&z, &u, h), target_cos)?;
                let hit = signs
                    .iter()
                    .zip(&e)
                    .any(|(&s, &ei)| s != 0.0 && s * ei <= land);
                Ok((hit, e))
            };

            let landed = |e: &[f64]| {
                signs
                    .iter()
                    .zip(e)
                    .all(|(&s, &ei)| s == 0.0 || s * ei >= -land)
            };

            let mut h = remaining;
            let (hit, e_full) = crossed(h)?;
            if hit {
                let (mut lo, mut hi, mut e_hi) = (0.0, h, e_full);
                for _ in 0..Self::BISECTION_LIMIT {
                    if landed(&e_hi) {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    let (hit_mid, e_mid) = crossed(mid)?;
                    if hit_mid {
                        hi = mid;
                        e_hi = e_mid;
                    } else {
                        lo = mid;
                    }
                }
                h = hi;
            }

            z = displaced(&z, &u, h);
            substeps += 1;
            if h >= remaining {
                break;
            }
            remaining -= h;
        }

        Ok(Advance {
            positions: z,
            substeps: substeps.max(1),
        })
    }
}

/// One plain synchronous Euler step of length `cfg.dt`.
pub fn step(state: &FormationState, spec: &TargetSpec, cfg: &SimConfig) -> Result<FormationState> {
    if state.n() != spec.n() {
        return Err(FormationError::InvalidInput(format!(
            "state has {} vehicles but target has {}",
            state.n(),
            spec.n()
        )));
    }
    let floor = cfg.collision_floor_for(state);
    let adv = ExplicitEuler.advance(state.positions(), spec.cosines(), &cfg.policy(), cfg.dt, 1)?;
    check_collision(&adv.positions, floor, cfg.dt)?;
    FormationState::new(adv.positions)
}

fn check_collision(positions: &[Vec2], floor: f64, t: f64) -> Result<()> {
    let (distance, i, j) = min_pairwise(positions);
    if distance <= floor {
        return Err(FormationError::CollisionImminent { t, i, j, distance });
    }
    Ok(())
}

/// One recorded point of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub positions: Vec<Vec2>,
    pub errors: Vec<f64>,
    /// `V(eps) = sum |eps_i|`.
    pub lyapunov: f64,
    pub min_distance: f64,
    /// `|u_i|` evaluated at this state.
    pub speeds: Vec<f64>,
    /// Euler updates used to reach this sample from the previous grid point.
    pub substeps: usize,
}

impl Sample {
    pub(crate) fn capture(
        t: f64,
        positions: Vec<Vec2>,
        spec: &TargetSpec,
        policy: &SignPolicy,
        substeps: usize,
    ) -> Result<Self> {
        let errors = ring_errors(&positions, spec.cosines())?;
        let speeds = ring_velocities(&positions, spec.cosines(), policy)?
            .iter()
            .map(|u| u.norm())
            .collect();
        Ok(Sample {
            t,
            lyapunov: lyapunov(&errors),
            min_distance: min_pairwise(&positions).0,
            positions,
            errors,
            speeds,
            substeps,
        })
    }

    pub fn state(&self) -> Result<FormationState> {
        FormationState::new(self.positions.clone())
    }

    pub fn max_speed(&self) -> f64 {
        self.speeds.iter().cloned().fold(0.0, f64::max)
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    /// Converged and the settle window elapsed.
    Converged,
    /// Reached `t_max` without convergence.
    Timeout,
    /// Pairwise distance fell to the collision floor.
    Collision {
        t: f64,
        i: usize,
        j: usize,
        distance: f64,
    },
}

/// Full record of one run.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub n: usize,
    pub dt: f64,
    pub stepper: String,
    pub samples: Vec<Sample>,
    pub converged: bool,
    /// First grid time with `V <= convergence_tol`.
    pub t_f: Option<f64>,
    /// Collision horizon of the initial state.
    pub t_star: f64,
    pub collision_floor: f64,
    pub termination: Termination,
    /// Every sample strictly after `t_f` has all speeds exactly zero.
    pub settled: bool,
}

impl TrajectoryRecord {
    pub fn initial(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("record has at least one sample")
    }

    /// The recorded sample at `t_f`.
    pub fn at_convergence(&self) -> Option<&Sample> {
        let t_f = self.t_f?;
        self.samples.iter().find(|s| s.t >= t_f)
    }

    /// Converts a collision into the corresponding error.
    pub fn ensure_collision_free(&self) -> Result<()> {
        match self.termination {
            Termination::Collision { t, i, j, distance } => {
                Err(FormationError::CollisionImminent { t, i, j, distance })
            }
            _ => Ok(()),
        }
    }

    /// `t_f < T*`, or `None` if the run did not converge.
    pub fn within_collision_horizon(&self) -> Option<bool> {
        self.t_f.map(|t| t < self.t_star)
    }
}

fn decimation(cfg: &SimConfig, n: usize) -> usize {
    cfg.record_every.unwrap_or_else(|| {
        let steps = (cfg.t_max / cfg.dt).ceil();
        ((n as f64 * steps) / RECORD_BUDGET).ceil().max(1.0) as usize
    })
}

/// Integrates from `state0` until convergence (plus the settle window),
/// `t_max`, or a collision.
pub fn run(
    state0: &FormationState,
    spec: &TargetSpec,
    cfg: &SimConfig,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    if state0.n() != spec.n() {
        return Err(FormationError::InvalidInput(format!(
            "state has {} vehicles but target has {}",
            state0.n(),
            spec.n()
        )));
    }
    let report = validate_feasibility(state0, spec);
    if !report.passes() {
        if cfg.force {
            for w in &report.warnings {
                warn!("{w}");
            }
        } else {
            return Err(FormationError::InfeasibleScenario(
                report.warnings.join("; "),
            ));
        }
    }

    let stepper = stepper_by_name(&cfg.stepper)?;
    let policy = cfg.policy();
    let floor = cfg.collision_floor_for(state0);
    let t_star = collision_horizon(state0);
    let every = decimation(cfg, state0.n());
    let total_steps = (cfg.t_max / cfg.dt).round() as u64;
    debug!(
        "run: n = {}, stepper = {}, dt = {}, T* = {t_star}, floor = {floor:e}, every = {every}",
        state0.n(),
        stepper.name(),
        cfg.dt
    );

    let mut samples = vec![Sample::capture(
        0.0,
        state0.positions().to_vec(),
        spec,
        &policy,
        0,
    )?];
    let mut z = state0.positions().to_vec();
    let mut v = samples[0].lyapunov;
    let mut t_f = (v <= cfg.convergence_tol).then_some(0.0);
    let mut settled = true;
    let mut termination = Termination::Timeout;
    let mut pending_substeps = 0;

    let mut k: u64 = 0;
    loop {
        let t = k as f64 * cfg.dt;
        if let Some(tf) = t_f {
            if t >= tf + cfg.settle_time - 0.5 * cfg.dt {
                termination = Termination::Converged;
                break;
            }
        }
        if k >= total_steps {
            break;
        }

        let adv = match stepper.advance(&z, spec.cosines(), &policy, cfg.dt, cfg.max_substeps) {
            Ok(adv) => adv,
            // two vehicles met inside the step, before the floor check could
            Err(FormationError::CollocatedVehicles { i, j, distance }) => {
                let t = (k + 1) as f64 * cfg.dt;
                warn!(
                    "vehicles {} and {} met within the step ending at t = {t}",
                    i + 1,
                    j + 1
                );
                termination = Termination::Collision { t, i, j, distance };
                break;
            }
            Err(e) => return Err(e),
        };
        k += 1;
        let t = k as f64 * cfg.dt;
        z = adv.positions;
        pending_substeps += adv.substeps;

        let (distance, i, j) = min_pairwise(&z);
        if distance <= floor {
            termination = Termination::Collision { t, i, j, distance };
            samples.push(Sample::capture(t, z, spec, &policy, pending_substeps)?);
            warn!(
                "collision floor reached at t = {t}: vehicles {} and {}",
                i + 1,
                j + 1
            );
            break;
        }

        let errors = ring_errors(&z, spec.cosines())?;
        v = lyapunov(&errors);
        let just_converged = t_f.is_none() && v <= cfg.convergence_tol;
        if just_converged {
            t_f = Some(t);
        }
        let record =
            just_converged || t_f.is_some() || k.is_multiple_of(every as u64) || k >= total_steps;
        if record {
            let s = Sample::capture(t, z.clone(), spec, &policy, pending_substeps)?;
            pending_substeps = 0;
            if t_f.is_some() && !just_converged && s.max_speed() != 0.0 {
                settled = false;
            }
            samples.push(s);
        }
    }

    if let Some(tf) = t_f {
        debug!("converged at t_f = {tf} (T* = {t_star}), final V = {v:e}");
    }
    Ok(TrajectoryRecord {
        n: state0.n(),
        dt: cfg.dt,
        stepper: stepper.name().to_string(),
        converged: t_f.is_some(),
        t_f,
        t_star,
        collision_floor: floor,
        termination,
        settled: t_f.is_some() && settled,
        samples,
    })
}

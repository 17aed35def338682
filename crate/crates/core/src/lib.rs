//! Bearing-only finite-time stabilization of angle-constrained circular
//! formations.
//!
//! `n` single-integrator vehicles form a directed ring. Each vehicle measures
//! only the unit bearings to its two ring neighbours and moves with
//! `z_i' = sgn(eps_i) (g_i - g_{i-1})`, where `eps_i` is the cosine error of
//! its subtended angle. The crate provides the geometry, the control law, a
//! deterministic simulator, the nonsmooth stability analysis with
//! convergence certificates, and a scenario-driven CLI.

pub mod analysis;
pub mod cli;
pub mod controller;
pub mod error;
pub mod formation;
pub mod geometry;
pub mod simulator;

pub use error::{FormationError, Result};
pub use formation::{FormationState, TargetSpec};
pub use geometry::{AngleRad, Bearing, Vec2};
pub use simulator::{run, SimConfig, TrajectoryRecord};

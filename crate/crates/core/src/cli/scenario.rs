//! Scenario files: a TOML document naming the ring size, the target angles
//! in degrees, the initial condition and the simulation parameters.
//!
//! ```toml
//! name = "square"
//! n = 4
//! target_angles_deg = [90.0, 90.0, 90.0, 90.0]
//!
//! [initial]
//! generator = "realize+perturb"
//! scale = 1.0
//! magnitude = 0.1
//! seed = 7
//!
//! [sim]
//! dt = 1e-3
//! ```
//!
//! An explicit start replaces the generator keys with
//! `positions = [[x1, y1], [x2, y2], ...]`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::formation::{perturb, realize_target, FormationState, TargetSpec};
use crate::geometry::Vec2;
use crate::simulator::SimConfig;

pub const REALIZE_PERTURB: &str = "realize+perturb";

/// Where the vehicles start.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Positions(Vec<Vec2>),
    /// Realize the target with shortest edge `scale`, then displace each
    /// vehicle uniformly within a disk of radius `magnitude`.
    RealizePerturb {
        scale: f64,
        magnitude: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub target_angles_deg: Vec<f64>,
    pub initial: InitialCondition,
    pub sim: SimConfig,
}

/// A scenario file that could not be read, with the offending location.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    /// Dotted key path, or `None` for syntax errors (whose message carries
    /// line and column).
    pub field: Option<String>,
    pub message: String,
}

impl ScenarioError {
    fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: Some(field.into()),
            message: message.into(),
        }
    }
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "`{field}`: {}", self.message),
            None => write!(f, "{}", self.message.trim_end()),
        }
    }
}

impl std::error::Error for ScenarioError {}

// On-disk shape. Every key of `initial` is optional here so the checks in
// `Scenario::from_raw` can name exactly which one is missing or misplaced.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    n: i64,
    target_angles_deg: Vec<f64>,
    initial: RawInitial,
    #[serde(default)]
    sim: SimConfig,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    positions: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    magnitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<i64>,
}

impl Scenario {
    /// Parses a scenario; `default_name` is used when the file has no `name`.
    pub fn parse(text: &str, default_name: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError {
            field: None,
            message: e.to_string(),
        })?;
        Self::from_raw(raw, default_name)
    }

    /// Reads and parses a file, naming the scenario after the file stem.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError {
            field: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("scenario");
        Self::parse(&text, stem).map_err(|e| match e.field {
            None => ScenarioError {
                field: None,
                message: format!("{}: {}", path.display(), e.message),
            },
            Some(_) => e,
        })
    }

    pub fn to_toml(&self) -> String {
        let (positions, generator, scale, magnitude, seed) = match &self.initial {
            InitialCondition::Positions(p) => (
                Some(p.iter().map(|&v| v.into()).collect()),
                None,
                None,
                None,
                None,
            ),
            InitialCondition::RealizePerturb {
                scale,
                magnitude,
                seed,
            } => (
                None,
                Some(REALIZE_PERTURB.to_string()),
                Some(*scale),
                Some(*magnitude),
                Some(*seed as i64),
            ),
        };
        let raw = RawScenario {
            name: Some(self.name.clone()),
            n: self.n as i64,
            target_angles_deg: self.target_angles_deg.clone(),
            initial: RawInitial {
                positions,
                generator,
                scale,
                magnitude,
                seed,
            },
            sim: self.sim.clone(),
        };
        toml::to_string(&raw).expect("scenario fields are all representable in TOML")
    }

    fn from_raw(raw: RawScenario, default_name: &str) -> Result<Self, ScenarioError> {
        if raw.n < 3 {
            return Err(ScenarioError::field(
                "n",
                format!("need at least 3 vehicles, got {}", raw.n),
            ));
        }
        let n = raw.n as usize;
        if raw.target_angles_deg.len() != n {
            return Err(ScenarioError::field(
                "target_angles_deg",
                format!("expected {n} angles, got {}", raw.target_angles_deg.len()),
            ));
        }
        for (k, a) in raw.target_angles_deg.iter().enumerate() {
            if !a.is_finite() {
                return Err(ScenarioError::field(
                    format!("target_angles_deg[{k}]"),
                    "must be finite",
                ));
            }
        }

        let init = raw.initial;
        let initial = match (&init.positions, init.generator.as_deref()) {
            (Some(_), Some(_)) => {
                return Err(ScenarioError::field(
                    "initial",
                    "give either `positions` or `generator`, not both",
                ))
            }
            (None, None) => {
                return Err(ScenarioError::field(
                    "initial",
                    "missing `positions` or `generator`",
                ));
            }
            (Some(p), None) => {
                for key in [
                    ("scale", init.scale.is_some()),
                    ("magnitude", init.magnitude.is_some()),
                    ("seed", init.seed.is_some()),
                ] {
                    if key.1 {
                        return Err(ScenarioError::field(
                            format!("initial.{}", key.0),
                            "only valid with a generator",
                        ));
                    }
                }
                if p.len() != n {
                    return Err(ScenarioError::field(
                        "initial.positions",
                        format!("expected {n} positions, got {}", p.len()),
                    ));
                }
                if let Some(k) = p.iter().position(|xy| !xy.iter().all(|c| c.is_finite())) {
                    return Err(ScenarioError::field(
                        format!("initial.positions[{k}]"),
                        "must be finite",
                    ));
                }
                InitialCondition::Positions(p.iter().map(|&xy| Vec2::from(xy)).collect())
            }
            (None, Some(REALIZE_PERTURB)) => {
                let scale = init.scale.unwrap_or(1.0);
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(ScenarioError::field(
                        "initial.scale",
                        format!("must be > 0, got {scale}"),
                    ));
                }
                let magnitude = init
                    .magnitude
                    .ok_or_else(|| ScenarioError::field("initial.magnitude", "missing"))?;
                if !(magnitude.is_finite() && magnitude >= 0.0) {
                    return Err(ScenarioError::field(
                        "initial.magnitude",
                        format!("must be >= 0, got {magnitude}"),
                    ));
                }
                let seed = match init.seed {
                    Some(s) if s < 0 => {
                        return Err(ScenarioError::field(
                            "initial.seed",
                            format!("must be >= 0, got {s}"),
                        ))
                    }
                    Some(s) => s as u64,
                    None => raw.sim.seed,
                };
                InitialCondition::RealizePerturb {
                    scale,
                    magnitude,
                    seed,
                }
            }
            (None, Some(other)) => {
                return Err(ScenarioError::field(
                    "initial.generator",
                    format!("unknown generator `{other}` (expected `{REALIZE_PERTURB}`)"),
                ))
            }
        };

        raw.sim
            .validate()
            .map_err(|e| ScenarioError::field("sim", e.to_string()))?;
        if raw.sim.seed > i64::MAX as u64 {
            return Err(ScenarioError::field(
                "sim.seed",
                "must fit in a signed 64-bit integer",
            ));
        }

        Ok(Scenario {
            name: raw.name.unwrap_or_else(|| default_name.to_string()),
            n,
            target_angles_deg: raw.target_angles_deg,
            initial,
            sim: raw.sim,
        })
    }

    pub fn target_spec(&self) -> crate::Result<TargetSpec> {
        TargetSpec::from_degrees(&self.target_angles_deg)
    }

    pub fn initial_state(&self) -> crate::Result<FormationState> {
        match &self.initial {
            InitialCondition::Positions(p) => FormationState::new(p.clone()),
            InitialCondition::RealizePerturb {
                scale,
                magnitude,
                seed,
            } => {
                let target = realize_target(&self.target_spec()?, *scale)?;
                perturb(&target, *magnitude, *seed)
            }
        }
    }
}

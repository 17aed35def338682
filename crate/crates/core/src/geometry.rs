//! Planar vector primitives.
//!
//! Everything here is a pure function on `Copy` values. Angles follow the
//! counterclockwise convention of the rotation matrix
//! `R(a) = [[cos a, -sin a], [sin a, cos a]]`.

use std::f64::consts::TAU;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{FormationError, Result};

/// Distance at or below which two vehicles are considered collocated and the
/// bearing between them is undefined.
pub const COLLOCATION_EPS: f64 = 1e-9;

/// A 2-D vector (positions, edges, velocities).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (other - self).norm()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self * rhs.x, self * rhs.y)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Vec2::new(x, y)
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

/// A unit-length direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bearing(Vec2);

impl Bearing {
    /// Normalizes `v`. Returns `None` for zero or non-finite input.
    pub fn new(v: Vec2) -> Option<Self> {
        let len = v.norm();
        if !v.is_finite() || len <= 0.0 || !len.is_finite() {
            return None;
        }
        Some(Bearing(Vec2::new(v.x / len, v.y / len)))
    }

    /// Unit vector at heading `phi` measured counterclockwise from +x.
    pub fn from_heading(phi: f64) -> Self {
        let (s, c) = phi.sin_cos();
        Bearing(Vec2::new(c, s))
    }

    pub fn vec(self) -> Vec2 {
        self.0
    }

    pub fn heading(self) -> f64 {
        self.0.y.atan2(self.0.x)
    }
}

impl Neg for Bearing {
    type Output = Bearing;
    fn neg(self) -> Bearing {
        Bearing(-self.0)
    }
}

/// An angle in radians.
///
/// Subtended and target angles are kept wrapped to `[0, 2pi)`; rotation
/// arguments may hold any real value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct AngleRad(pub f64);

impl AngleRad {
    /// Wraps `value` into `[0, 2pi)`.
    pub fn wrapped(value: f64) -> Self {
        let mut w = value.rem_euclid(TAU);
        // rem_euclid can round up to exactly TAU for tiny negative inputs
        if w >= TAU {
            w = 0.0;
        }
        AngleRad(w)
    }

    pub fn from_degrees(deg: f64) -> Self {
        AngleRad::wrapped(deg.to_radians())
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }
}

/// 2x2 matrix in row-major order.
pub type Mat2 = [[f64; 2]; 2];

/// `R(alpha) v`.
pub fn rotate(alpha: AngleRad, v: Vec2) -> Vec2 {
    let (s, c) = alpha.0.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// `R(pi/2) g`, written out so that the result is exact.
pub fn perp(g: Bearing) -> Bearing {
    Bearing(Vec2::new(-g.0.y, g.0.x))
}

/// `(I - g g^T) v`: removes the component of `v` along `g`.
pub fn project_out(g: Bearing, v: Vec2) -> Vec2 {
    let along = g.0.dot(v);
    v - along * g.0
}

/// The projector `I - g g^T` as a matrix.
pub fn projector(g: Bearing) -> Mat2 {
    let Vec2 { x, y } = g.0;
    [[1.0 - x * x, -x * y], [-x * y, 1.0 - y * y]]
}

/// `a a^T`.
pub fn outer(a: Vec2) -> Mat2 {
    [[a.x * a.x, a.x * a.y], [a.x * a.y, a.y * a.y]]
}

/// `u^T M v`.
pub fn quadratic(u: Vec2, m: &Mat2, v: Vec2) -> f64 {
    u.x * (m[0][0] * v.x + m[0][1] * v.y) + u.y * (m[1][0] * v.x + m[1][1] * v.y)
}

/// Unit vector pointing from `from` toward `to`.
pub fn bearing_from_to(from: Vec2, to: Vec2) -> Result<Bearing> {
    let d = to - from;
    let dist = d.norm();
    if dist.is_nan() || dist <= COLLOCATION_EPS {
        return Err(FormationError::CollocatedVehicles {
            i: 0,
            j: 0,
            distance: dist,
        });
    }
    Ok(Bearing(Vec2::new(d.x / dist, d.y / dist)))
}

/// The angle `theta` in `[0, 2pi)` such that rotating `-g_prev` by `theta`
/// gives `g`.
pub fn subtended_angle(g: Bearing, g_prev: Bearing) -> AngleRad {
    let a = -g_prev;
    let b = perp(a);
    let theta = g.0.dot(b.0).atan2(g.0.dot(a.0));
    AngleRad::wrapped(theta)
}

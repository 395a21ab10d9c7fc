//! Positions, distances and the bounded planning region.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("elevation angle undefined for coincident points")]
    CoincidentPoints,
    #[error("invalid interval [{min}, {max}] on {axis} axis")]
    InvalidInterval { axis: &'static str, min: f64, max: f64 },
}

/// A point in space, meters. `z` is the altitude above ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn offset(&self, dx: f64, dy: f64, dz: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.z + dz)
    }

    /// Lexicographic (x, y, z) ordering used for deterministic tie-breaks.
    pub fn lex_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.x
            .total_cmp(&other.x)
            .then(self.y.total_cmp(&other.y))
            .then(self.z.total_cmp(&other.z))
    }
}

impl From<[f64; 3]> for Position3D {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<Position3D> for [f64; 3] {
    fn from(p: Position3D) -> Self {
        p.as_array()
    }
}

/// Closed interval `[min, max]` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.min).min(self.max)
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    fn is_valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min <= self.max
    }
}

impl From<[f64; 2]> for Interval {
    fn from(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.min, i.max]
    }
}

/// Axis-aligned box bounding every node and stop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    #[serde(rename = "x_m")]
    pub x: Interval,
    #[serde(rename = "y_m")]
    pub y: Interval,
    #[serde(rename = "z_m")]
    pub z: Interval,
}

impl Region {
    pub fn new(x: Interval, y: Interval, z: Interval) -> Result<Self, GeometryError> {
        let r = Self { x, y, z };
        r.check()?;
        Ok(r)
    }

    pub fn check(&self) -> Result<(), GeometryError> {
        for (axis, iv) in [("x", self.x), ("y", self.y), ("z", self.z)] {
            if !iv.is_valid() {
                return Err(GeometryError::InvalidInterval { axis, min: iv.min, max: iv.max });
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &Position3D) -> bool {
        self.x.contains(p.x) && self.y.contains(p.y) && self.z.contains(p.z)
    }

    /// Region centre, used as a fallback docking station.
    pub fn center(&self) -> Position3D {
        Position3D::new(
            0.5 * (self.x.min + self.x.max),
            0.5 * (self.y.min + self.y.max),
            0.5 * (self.z.min + self.z.max),
        )
    }
}

impl Default for Region {
    fn default() -> Self {
        Self {
            x: Interval::new(0.0, 5000.0),
            y: Interval::new(0.0, 5000.0),
            z: Interval::new(0.0, 200.0),
        }
    }
}

pub fn distance(a: &Position3D, b: &Position3D) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Elevation of `air` as seen from `ground`, in degrees: `asin(Δz / Δ)`.
pub fn elevation_angle(ground: &Position3D, air: &Position3D) -> Result<f64, GeometryError> {
    let d = distance(ground, air);
    if d <= 0.0 {
        return Err(GeometryError::CoincidentPoints);
    }
    let ratio = ((air.z - ground.z) / d).clamp(-1.0, 1.0);
    Ok(ratio.asin().to_degrees())
}

pub fn clamp_to_region(p: &Position3D, r: &Region) -> Position3D {
    Position3D::new(r.x.clamp(p.x), r.y.clamp(p.y), r.z.clamp(p.z))
}

//! Scenario documents: JSON schema, validation and seeded generation.
//!
//! A scenario is one JSON document. Field names carry their units
//! (`_m`, `_w`, `_hz`, `_j`, ...). Unknown keys are rejected and omitted
//! parameter blocks take their defaults.
//!
//! Generation draws from ChaCha8 (`rand_chacha`, seeded with
//! `seed_from_u64`). A uniform variate on `[0, 1)` is `(next_u64 >> 11) · 2⁻⁵³`,
//! and `[lo, hi)` is `lo + u·(hi − lo)`. Draw order: for each pair, tx x,
//! tx y, then (bearing, distance) attempts until the receiver lands inside
//! the region, then message size and μWave transmit power; then for each
//! drone, μWave transmit power and speed.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{dbm_to_watts, BandPower, EnvironmentParams, Node, NodeKind, RadioParams, RelayLink};
use crate::geometry::{distance, Interval, Position3D, Region};
use crate::power::{DroneSpec, PhysicsConstants, DEFAULT_BATTERY_J};

pub const SCHEMA_VERSION: u32 = 1;
pub const RECEIVER_ATTEMPTS: usize = 64;
pub const BITS_PER_MB: f64 = 8.0e6;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("malformed scenario document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    UnsupportedSchema(u32),
    #[error("invalid scenario: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("could not place receiver of pair {pair} inside the region after {attempts} attempts")]
    ReceiverPlacement { pair: usize, attempts: usize },
    #[error("invalid generation request: {0}")]
    BadRequest(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn violation(field: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pair {
    pub tx_m: Position3D,
    pub rx_m: Position3D,
    #[serde(default)]
    pub tx_kind: NodeKind,
    #[serde(default)]
    pub rx_kind: NodeKind,
    pub message_bits: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    /// Falls back to the radio block when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_power_uwave_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_power_mmwave_w: Option<f64>,
}

impl Pair {
    pub fn tx_node(&self) -> Node {
        Node { pos: self.tx_m, kind: self.tx_kind }
    }

    pub fn rx_node(&self) -> Node {
        Node { pos: self.rx_m, kind: self.rx_kind }
    }

    pub fn separation_m(&self) -> f64 {
        distance(&self.tx_m, &self.rx_m)
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_ds() -> Position3D {
    Position3D::new(2500.0, 2500.0, 30.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub region: Region,
    #[serde(default = "default_ds")]
    pub docking_station_m: Position3D,
    pub pairs: Vec<Pair>,
    pub drones: Vec<DroneSpec>,
    #[serde(default)]
    pub env: EnvironmentParams,
    #[serde(default)]
    pub radio: RadioParams,
    #[serde(default)]
    pub physics: PhysicsConstants,
}

impl Scenario {
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_drones(&self) -> usize {
        self.drones.len()
    }

    /// Pair weights as stored; uniform when none are given.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.pairs.len();
        if self.pairs.iter().all(|p| p.weight.is_none()) {
            return vec![1.0 / n as f64; n];
        }
        self.pairs.iter().map(|p| p.weight.unwrap_or(0.0)).collect()
    }

    pub fn relay_link(&self, pair: usize, drone: usize) -> RelayLink {
        let p = &self.pairs[pair];
        let d = &self.drones[drone];
        RelayLink {
            tx: p.tx_node(),
            rx: p.rx_node(),
            source_power: BandPower {
                uwave_w: p.tx_power_uwave_w.unwrap_or(self.radio.tx_power_uwave_w),
                mmwave_w: p.tx_power_mmwave_w.unwrap_or(self.radio.tx_power_mmwave_w),
            },
            relay_power: BandPower { uwave_w: d.tx_uwave_w, mmwave_w: d.tx_mmwave_w },
        }
    }

    /// Keeps only the first `n` drones.
    pub fn with_drone_count(&self, n: usize) -> Scenario {
        let mut s = self.clone();
        s.drones.truncate(n);
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization is infallible")
    }
}

/// All invariant violations; empty iff the scenario is valid.
pub fn validate(s: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    if s.schema_version != SCHEMA_VERSION {
        out.push(violation("schema_version", format!("must be {SCHEMA_VERSION}")));
    }
    if let Err(e) = s.region.check() {
        out.push(violation("region", e.to_string()));
        return out;
    }
    if !s.docking_station_m.is_finite() || !s.region.contains(&s.docking_station_m) {
        out.push(violation("docking_station_m", "must lie inside the region"));
    }
    if s.pairs.is_empty() {
        out.push(violation("pairs", "at least one pair is required"));
    }
    if s.drones.is_empty() {
        out.push(violation("drones", "at least one drone is required"));
    }
    for (i, p) in s.pairs.iter().enumerate() {
        for (end, pos) in [("tx_m", &p.tx_m), ("rx_m", &p.rx_m)] {
            if !pos.is_finite() || pos.z < 0.0 || !s.region.contains(pos) {
                out.push(violation(format!("pairs[{i}].{end}"), format!("pair {i} node {pos:?} lies outside the region")));
            }
        }
        if p.tx_m == p.rx_m {
            out.push(violation(format!("pairs[{i}]"), "transmitter and receiver coincide"));
        }
        if !(p.message_bits > 0.0 && p.message_bits.is_finite()) {
            out.push(violation(format!("pairs[{i}].message_bits"), format!("must be > 0 (got {})", p.message_bits)));
        }
        if let Some(w) = p.weight {
            if !(w >= 0.0 && w.is_finite()) {
                out.push(violation(format!("pairs[{i}].weight"), format!("must be >= 0 (got {w})")));
            }
        }
        for (name, v) in [("tx_power_uwave_w", p.tx_power_uwave_w), ("tx_power_mmwave_w", p.tx_power_mmwave_w)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    out.push(violation(format!("pairs[{i}].{name}"), format!("must be > 0 (got {v})")));
                }
            }
        }
    }
    let ws = s.weights();
    if !s.pairs.is_empty() && ws.iter().all(|w| w.is_finite() && *w >= 0.0) {
        let total: f64 = ws.iter().sum();
        if total <= 0.0 {
            out.push(violation("pairs[].weight", "weights must not all be zero"));
        } else if s.pairs.iter().any(|p| p.weight.is_some()) && (total - 1.0).abs() > 1e-9 {
            out.push(violation("pairs[].weight", format!("weights sum to {total}, expected 1")));
        }
    }
    for (i, d) in s.drones.iter().enumerate() {
        out.extend(d.violations(&format!("drones[{i}]")).into_iter().map(|m| {
            let (field, msg) = m.split_once(' ').unwrap_or((&m, ""));
            violation(field, msg.to_string())
        }));
    }
    for m in s.env.violations().into_iter().chain(s.radio.violations()) {
        let (field, msg) = m.split_once(' ').unwrap_or((&m, ""));
        out.push(violation(field, msg.to_string()));
    }
    for (name, v) in [("physics.gravity_mps2", s.physics.gravity_mps2), ("physics.air_density_kg_m3", s.physics.air_density_kg_m3)] {
        if !(v > 0.0 && v.is_finite()) {
            out.push(violation(name, format!("must be > 0 (got {v})")));
        }
    }
    out
}

/// Parses, normalizes weights and validates. Returns normalization warnings.
pub fn load_with_warnings(config_text: &str) -> Result<(Scenario, Vec<String>), ScenarioError> {
    let mut s: Scenario = serde_json::from_str(config_text)?;
    if s.schema_version != SCHEMA_VERSION {
        return Err(ScenarioError::UnsupportedSchema(s.schema_version));
    }
    let mut warnings = Vec::new();
    let given = s.pairs.iter().filter(|p| p.weight.is_some()).count();
    if given > 0 && given < s.pairs.len() {
        return Err(ScenarioError::Invalid(vec![violation(
            "pairs[].weight",
            "either every pair or no pair must carry a weight",
        )]));
    }
    if given > 0 {
        let total: f64 = s.pairs.iter().filter_map(|p| p.weight).sum();
        if total > 0.0 && total.is_finite() && (total - 1.0).abs() > 1e-12 {
            warnings.push(format!("pair weights sum to {total}; normalized to 1"));
            for p in &mut s.pairs {
                p.weight = p.weight.map(|w| w / total);
            }
        }
    }
    let v = validate(&s);
    if !v.is_empty() {
        return Err(ScenarioError::Invalid(v));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((s, warnings))
}

pub fn load(config_text: &str) -> Result<Scenario, ScenarioError> {
    load_with_warnings(config_text).map(|(s, _)| s)
}

/// Knobs for [`generate`]. `None` keeps the stock setup.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateOverrides {
    pub region: Option<Region>,
    pub docking_station_m: Option<Position3D>,
    pub transceiver_altitude_m: Option<f64>,
    pub rx_distance_m: Option<Interval>,
    pub message_mb: Option<Interval>,
    pub uwave_power_dbm: Option<Interval>,
    pub speed_mps: Option<Interval>,
    pub battery_j: Option<f64>,
    pub env: Option<EnvironmentParams>,
    pub radio: Option<RadioParams>,
    pub physics: Option<PhysicsConstants>,
    /// Weight each pair by its message size instead of uniformly.
    pub weights_by_message: bool,
}

struct Uniform(ChaCha8Rng);

impl Uniform {
    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn range(&mut self, iv: Interval) -> f64 {
        iv.min + self.unit() * (iv.max - iv.min)
    }
}

pub fn generate(seed: u64, n_pairs: usize, n_drones: usize, o: &GenerateOverrides) -> Result<Scenario, ScenarioError> {
    if n_pairs == 0 || n_drones == 0 {
        return Err(ScenarioError::BadRequest("need at least one pair and one drone".into()));
    }
    let region = o.region.unwrap_or_default();
    region.check().map_err(|e| ScenarioError::BadRequest(e.to_string()))?;
    let ds = o.docking_station_m.unwrap_or_else(default_ds);
    let alt = o.transceiver_altitude_m.unwrap_or(0.0);
    let rx_range = o.rx_distance_m.unwrap_or(Interval::new(300.0, 2000.0));
    let msg_range = o.message_mb.unwrap_or(Interval::new(250.0, 625.0));
    let power_range = o.uwave_power_dbm.unwrap_or(Interval::new(-10.0, 36.0));
    let speed_range = o.speed_mps.unwrap_or(Interval::new(10.0, 20.0));
    let radio = o.radio.unwrap_or_default();

    let mut rng = Uniform(ChaCha8Rng::seed_from_u64(seed));
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let tx = Position3D::new(rng.range(region.x), rng.range(region.y), alt);
        let mut rx = None;
        for _ in 0..RECEIVER_ATTEMPTS {
            let bearing = rng.unit() * std::f64::consts::TAU;
            let r = rng.range(rx_range);
            let cand = Position3D::new(tx.x + r * bearing.cos(), tx.y + r * bearing.sin(), alt);
            if region.contains(&cand) {
                rx = Some(cand);
                break;
            }
        }
        let rx = rx.ok_or(ScenarioError::ReceiverPlacement { pair: i, attempts: RECEIVER_ATTEMPTS })?;
        let message_bits = rng.range(msg_range) * BITS_PER_MB;
        let p_uw = dbm_to_watts(rng.range(power_range));
        pairs.push(Pair {
            tx_m: tx,
            rx_m: rx,
            tx_kind: NodeKind::Ground,
            rx_kind: NodeKind::Ground,
            message_bits,
            weight: None,
            tx_power_uwave_w: Some(p_uw),
            tx_power_mmwave_w: Some(radio.tx_power_mmwave_w),
        });
    }
    if o.weights_by_message {
        let total: f64 = pairs.iter().map(|p| p.message_bits).sum();
        for p in &mut pairs {
            p.weight = Some(p.message_bits / total);
        }
    }
    let mut drones = Vec::with_capacity(n_drones);
    for _ in 0..n_drones {
        let tx_uwave_w = dbm_to_watts(rng.range(power_range));
        let speed = rng.range(speed_range);
        drones.push(DroneSpec {
            speed_mps: speed,
            v_max_mps: speed,
            tx_uwave_w,
            tx_mmwave_w: radio.tx_power_mmwave_w,
            battery_j: o.battery_j.unwrap_or(DEFAULT_BATTERY_J),
            ..DroneSpec::default()
        });
    }
    let s = Scenario {
        schema_version: SCHEMA_VERSION,
        region,
        docking_station_m: ds,
        pairs,
        drones,
        env: o.env.unwrap_or_default(),
        radio,
        physics: o.physics.unwrap_or_default(),
    };
    let v = validate(&s);
    if !v.is_empty() {
        return Err(ScenarioError::Invalid(v));
    }
    Ok(s)
}

//! Large-scale channel models for the two relay bands.
//!
//! μWave links use a LoS/NLoS free-space model whose air-to-ground variant is
//! the LoS-probability-weighted mixture of both. mmWave links add atmospheric
//! absorption and are only usable over line of sight: an air-to-ground hop is
//! feasible when its LoS probability reaches `1 - epsilon`. Unusable hops are
//! reported as [`PathLoss::Infeasible`] rather than an infinite loss so all
//! arithmetic stays finite.
//!
//! Rates follow two-slot decode-and-forward: half the (shared) bandwidth times
//! the weaker of the two hop spectral efficiencies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{distance, elevation_angle, GeometryError, Position3D};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("path loss undefined at zero distance")]
    ZeroDistance,
    #[error("link rate is zero or infeasible; pair cannot be served from this stop")]
    Unservable,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1e3).log10()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    #[serde(rename = "uwave")]
    UWave,
    #[serde(rename = "mmwave")]
    MmWave,
}

impl Band {
    /// The binary band flag: 1 for μWave, 0 for mmWave.
    pub fn flag(self) -> u8 {
        match self {
            Band::UWave => 1,
            Band::MmWave => 0,
        }
    }
}

impl std::fmt::Display for Band {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Band::UWave => "uwave",
            Band::MmWave => "mmwave",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    #[default]
    Ground,
    Air,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub pos: Position3D,
    pub kind: NodeKind,
}

impl Node {
    pub fn ground(pos: Position3D) -> Self {
        Self { pos, kind: NodeKind::Ground }
    }

    pub fn air(pos: Position3D) -> Self {
        Self { pos, kind: NodeKind::Air }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkClass {
    GroundToGround,
    AirToAir,
    AirToGround,
}

pub fn link_class(u: NodeKind, v: NodeKind) -> LinkClass {
    match (u, v) {
        (NodeKind::Ground, NodeKind::Ground) => LinkClass::GroundToGround,
        (NodeKind::Air, NodeKind::Air) => LinkClass::AirToAir,
        _ => LinkClass::AirToGround,
    }
}

/// Propagation environment. Defaults are the urban S-curve constants with
/// clear-air 60 GHz absorption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentParams {
    pub nu1: f64,
    pub nu2: f64,
    pub path_loss_exponent: f64,
    pub l_los_db: f64,
    pub l_nlos_db: f64,
    pub l_vap_db_per_km: f64,
    pub l_o2_db_per_km: f64,
    pub l_rain_db_per_km: f64,
    pub los_epsilon: f64,
    pub noise_psd_w_per_hz: f64,
    pub interference_uwave_w: f64,
}

impl Default for EnvironmentParams {
    fn default() -> Self {
        Self {
            nu1: 9.61,
            nu2: 0.16,
            path_loss_exponent: 2.0,
            l_los_db: 1.0,
            l_nlos_db: 20.0,
            l_vap_db_per_km: 0.1,
            l_o2_db_per_km: 15.1,
            l_rain_db_per_km: 0.0,
            los_epsilon: 0.01,
            noise_psd_w_per_hz: dbm_to_watts(-174.0),
            interference_uwave_w: 0.0,
        }
    }
}

impl EnvironmentParams {
    /// Suburban S-curve constants (ν1 = 4.88, ν2 = 0.43), otherwise default.
    pub fn suburban() -> Self {
        Self { nu1: 4.88, nu2: 0.43, ..Self::default() }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.nu1 > 0.0 && self.nu1.is_finite()) {
            v.push(format!("env.nu1 must be > 0 (got {})", self.nu1));
        }
        if !(self.nu2 > 0.0 && self.nu2.is_finite()) {
            v.push(format!("env.nu2 must be > 0 (got {})", self.nu2));
        }
        if !(self.path_loss_exponent >= 2.0 && self.path_loss_exponent.is_finite()) {
            v.push(format!("env.path_loss_exponent must be >= 2 (got {})", self.path_loss_exponent));
        }
        for (name, val) in [
            ("l_los_db", self.l_los_db),
            ("l_nlos_db", self.l_nlos_db),
            ("l_vap_db_per_km", self.l_vap_db_per_km),
            ("l_o2_db_per_km", self.l_o2_db_per_km),
            ("l_rain_db_per_km", self.l_rain_db_per_km),
            ("interference_uwave_w", self.interference_uwave_w),
        ] {
            if !(val >= 0.0 && val.is_finite()) {
                v.push(format!("env.{name} must be >= 0 (got {val})"));
            }
        }
        if !(self.los_epsilon >= 0.0 && self.los_epsilon < 1.0) {
            v.push(format!("env.los_epsilon must be in [0, 1) (got {})", self.los_epsilon));
        }
        if !(self.noise_psd_w_per_hz > 0.0 && self.noise_psd_w_per_hz.is_finite()) {
            v.push(format!("env.noise_psd_w_per_hz must be > 0 (got {})", self.noise_psd_w_per_hz));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    pub freq_uwave_hz: f64,
    pub freq_mmwave_hz: f64,
    pub bw_uwave_hz: f64,
    pub bw_mmwave_hz: f64,
    /// Transmitter power when a pair does not specify its own.
    pub tx_power_uwave_w: f64,
    pub tx_power_mmwave_w: f64,
    pub gain_omni_lin: f64,
    pub gain_directive_lin: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            freq_uwave_hz: 2.0e9,
            freq_mmwave_hz: 60.0e9,
            bw_uwave_hz: 1.0e6,
            bw_mmwave_hz: 3.5e9,
            tx_power_uwave_w: dbm_to_watts(23.0),
            tx_power_mmwave_w: dbm_to_watts(24.0),
            gain_omni_lin: 1.0,
            gain_directive_lin: db_to_linear(37.0),
        }
    }
}

impl RadioParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, val) in [
            ("freq_uwave_hz", self.freq_uwave_hz),
            ("freq_mmwave_hz", self.freq_mmwave_hz),
            ("bw_uwave_hz", self.bw_uwave_hz),
            ("bw_mmwave_hz", self.bw_mmwave_hz),
            ("tx_power_uwave_w", self.tx_power_uwave_w),
            ("tx_power_mmwave_w", self.tx_power_mmwave_w),
            ("gain_omni_lin", self.gain_omni_lin),
            ("gain_directive_lin", self.gain_directive_lin),
        ] {
            if !(val > 0.0 && val.is_finite()) {
                v.push(format!("radio.{name} must be > 0 (got {val})"));
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathLoss {
    Db(f64),
    Infeasible,
}

impl PathLoss {
    pub fn db(self) -> Option<f64> {
        match self {
            PathLoss::Db(v) => Some(v),
            PathLoss::Infeasible => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Bps(f64),
    Infeasible,
}

impl Rate {
    pub fn bps(self) -> Option<f64> {
        match self {
            Rate::Bps(r) => Some(r),
            Rate::Infeasible => None,
        }
    }

    /// Feasible and strictly positive.
    pub fn usable(self) -> Option<f64> {
        self.bps().filter(|r| *r > 0.0)
    }
}

/// `p = 1 / (1 + ν1·exp(−ν2·(θ − ν1)))`, θ in degrees.
pub fn los_probability(
    ground: &Position3D,
    air: &Position3D,
    env: &EnvironmentParams,
) -> Result<f64, ChannelError> {
    let theta = elevation_angle(ground, air)?;
    Ok(los_probability_at(theta, env))
}

pub fn los_probability_at(theta_deg: f64, env: &EnvironmentParams) -> f64 {
    1.0 / (1.0 + env.nu1 * (-env.nu2 * (theta_deg - env.nu1)).exp())
}

/// `10·n·log10(4π f Δ / c) + L`.
pub fn fspl_db(freq_hz: f64, dist_m: f64, n_exp: f64, extra_loss_db: f64) -> Result<f64, ChannelError> {
    if dist_m <= 0.0 {
        return Err(ChannelError::ZeroDistance);
    }
    Ok(10.0 * n_exp * (4.0 * std::f64::consts::PI * freq_hz * dist_m / SPEED_OF_LIGHT).log10() + extra_loss_db)
}

fn ground_and_air<'a>(u: &'a Node, v: &'a Node) -> (&'a Position3D, &'a Position3D) {
    if u.kind == NodeKind::Ground {
        (&u.pos, &v.pos)
    } else {
        (&v.pos, &u.pos)
    }
}

pub fn path_loss_uwave_db(
    u: &Node,
    v: &Node,
    env: &EnvironmentParams,
    radio: &RadioParams,
) -> Result<f64, ChannelError> {
    let d = distance(&u.pos, &v.pos);
    let f = radio.freq_uwave_hz;
    let n = env.path_loss_exponent;
    match link_class(u.kind, v.kind) {
        LinkClass::GroundToGround => fspl_db(f, d, n, env.l_nlos_db),
        LinkClass::AirToAir => fspl_db(f, d, n, env.l_los_db),
        LinkClass::AirToGround => {
            let (g, a) = ground_and_air(u, v);
            let p = los_probability(g, a, env)?;
            let los = fspl_db(f, d, n, env.l_los_db)?;
            let nlos = fspl_db(f, d, n, env.l_nlos_db)?;
            Ok(p * los + (1.0 - p) * nlos)
        }
    }
}

/// `(Δ / 1000)·(L_vap + L_O2 + L_rain)`.
pub fn atmospheric_loss_db(dist_m: f64, env: &EnvironmentParams) -> f64 {
    dist_m / 1000.0 * (env.l_vap_db_per_km + env.l_o2_db_per_km + env.l_rain_db_per_km)
}

pub fn path_loss_mmwave_db(
    u: &Node,
    v: &Node,
    env: &EnvironmentParams,
    radio: &RadioParams,
) -> Result<PathLoss, ChannelError> {
    let d = distance(&u.pos, &v.pos);
    let class = link_class(u.kind, v.kind);
    if class == LinkClass::GroundToGround {
        return Ok(PathLoss::Infeasible);
    }
    if class == LinkClass::AirToGround {
        let (g, a) = ground_and_air(u, v);
        if los_probability(g, a, env)? < 1.0 - env.los_epsilon {
            return Ok(PathLoss::Infeasible);
        }
    }
    let los = fspl_db(radio.freq_mmwave_hz, d, env.path_loss_exponent, env.l_los_db)?;
    Ok(PathLoss::Db(atmospheric_loss_db(d, env) + los))
}

/// `P·G_tx·G_rx·10^(−PL/10) / (I + N0·B)`; an infeasible hop has zero SNR.
pub fn snr_linear(
    tx_power_w: f64,
    g_tx: f64,
    g_rx: f64,
    path_loss: PathLoss,
    interference_w: f64,
    noise_psd: f64,
    bw_hz: f64,
) -> f64 {
    match path_loss {
        PathLoss::Db(pl) => tx_power_w * g_tx * g_rx * 10f64.powf(-pl / 10.0) / (interference_w + noise_psd * bw_hz),
        PathLoss::Infeasible => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPower {
    pub uwave_w: f64,
    pub mmwave_w: f64,
}

/// Everything the rate model needs about one transceiver pair and one relay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayLink {
    pub tx: Node,
    pub rx: Node,
    pub source_power: BandPower,
    pub relay_power: BandPower,
}

/// Spectral efficiency (bits/s/Hz) of both hops through `relay_pos`.
pub fn hop_snrs(
    link: &RelayLink,
    band: Band,
    relay_pos: &Position3D,
    env: &EnvironmentParams,
    radio: &RadioParams,
) -> Result<(f64, f64), ChannelError> {
    let relay = Node::air(*relay_pos);
    match band {
        Band::UWave => {
            let g = radio.gain_omni_lin;
            let pl1 = path_loss_uwave_db(&link.tx, &relay, env, radio)?;
            let pl2 = path_loss_uwave_db(&relay, &link.rx, env, radio)?;
            let i = env.interference_uwave_w;
            let n0 = env.noise_psd_w_per_hz;
            let b = radio.bw_uwave_hz;
            Ok((
                snr_linear(link.source_power.uwave_w, g, g, PathLoss::Db(pl1), i, n0, b),
                snr_linear(link.relay_power.uwave_w, g, g, PathLoss::Db(pl2), i, n0, b),
            ))
        }
        Band::MmWave => {
            let g = radio.gain_directive_lin;
            let pl1 = path_loss_mmwave_db(&link.tx, &relay, env, radio)?;
            let pl2 = path_loss_mmwave_db(&relay, &link.rx, env, radio)?;
            let n0 = env.noise_psd_w_per_hz;
            let b = radio.bw_mmwave_hz;
            Ok((
                snr_linear(link.source_power.mmwave_w, g, g, pl1, 0.0, n0, b),
                snr_linear(link.relay_power.mmwave_w, g, g, pl2, 0.0, n0, b),
            ))
        }
    }
}

/// `(B / (2·N_uwave))·min(log2(1 + SINR₁), log2(1 + SINR₂))`.
pub fn rate_uwave(
    link: &RelayLink,
    relay_pos: &Position3D,
    n_uwave_drones: usize,
    env: &EnvironmentParams,
    radio: &RadioParams,
) -> Result<f64, ChannelError> {
    let share = n_uwave_drones.max(1) as f64;
    let (s1, s2) = hop_snrs(link, Band::UWave, relay_pos, env, radio)?;
    Ok(radio.bw_uwave_hz / (2.0 * share) * (1.0 + s1).log2().min((1.0 + s2).log2()))
}

pub fn rate_mmwave(
    link: &RelayLink,
    relay_pos: &Position3D,
    env: &EnvironmentParams,
    radio: &RadioParams,
) -> Result<Rate, ChannelError> {
    let relay = Node::air(*relay_pos);
    let pl1 = path_loss_mmwave_db(&link.tx, &relay, env, radio)?;
    let pl2 = path_loss_mmwave_db(&relay, &link.rx, env, radio)?;
    if pl1 == PathLoss::Infeasible || pl2 == PathLoss::Infeasible {
        return Ok(Rate::Infeasible);
    }
    let g = radio.gain_directive_lin;
    let n0 = env.noise_psd_w_per_hz;
    let b = radio.bw_mmwave_hz;
    let s1 = snr_linear(link.source_power.mmwave_w, g, g, pl1, 0.0, n0, b);
    let s2 = snr_linear(link.relay_power.mmwave_w, g, g, pl2, 0.0, n0, b);
    Ok(Rate::Bps(b / 2.0 * (1.0 + s1).log2().min((1.0 + s2).log2())))
}

pub fn relay_rate(
    link: &RelayLink,
    band: Band,
    relay_pos: &Position3D,
    n_uwave_drones: usize,
    env: &EnvironmentParams,
    radio: &RadioParams,
) -> Result<Rate, ChannelError> {
    match band {
        Band::UWave => rate_uwave(link, relay_pos, n_uwave_drones, env, radio).map(Rate::Bps),
        Band::MmWave => rate_mmwave(link, relay_pos, env, radio),
    }
}

/// Seconds to move `message_bits` at `rate`.
pub fn comm_time(message_bits: f64, rate: Rate) -> Result<f64, ChannelError> {
    match rate.usable() {
        Some(r) => Ok(message_bits / r),
        None => Err(ChannelError::Unservable),
    }
}

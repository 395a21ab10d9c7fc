//! Drone propulsion and communication power, and tour energy accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{dbm_to_watts, Band};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerError {
    #[error("cruise speed {speed} m/s exceeds maximum {v_max} m/s")]
    SpeedAboveMax { speed: f64, v_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConstants {
    pub gravity_mps2: f64,
    pub air_density_kg_m3: f64,
}

impl Default for PhysicsConstants {
    fn default() -> Self {
        Self { gravity_mps2: 9.81, air_density_kg_m3: 1.225 }
    }
}

/// Airframe, battery and radio front-end of one drone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DroneSpec {
    pub mass_kg: f64,
    pub prop_radius_m: f64,
    pub prop_count: u32,
    pub p_full_w: f64,
    pub v_max_mps: f64,
    pub speed_mps: f64,
    pub battery_j: f64,
    pub p_static_w: f64,
    pub alpha_uwave: f64,
    pub alpha_mmwave: f64,
    pub tx_uwave_w: f64,
    pub tx_mmwave_w: f64,
}

/// Battery large enough that mission energy never binds for the stock
/// parameter ranges.
pub const DEFAULT_BATTERY_J: f64 = 1.0e9;

impl Default for DroneSpec {
    fn default() -> Self {
        Self {
            mass_kg: 2.0,
            prop_radius_m: 0.2,
            prop_count: 4,
            p_full_w: 10.0,
            v_max_mps: 15.0,
            speed_mps: 15.0,
            battery_j: DEFAULT_BATTERY_J,
            p_static_w: 5.0,
            alpha_uwave: 4.0,
            alpha_mmwave: 4.0,
            tx_uwave_w: dbm_to_watts(23.0),
            tx_mmwave_w: dbm_to_watts(24.0),
        }
    }
}

impl DroneSpec {
    pub fn violations(&self, label: &str) -> Vec<String> {
        let mut v = Vec::new();
        for (name, val) in [
            ("mass_kg", self.mass_kg),
            ("prop_radius_m", self.prop_radius_m),
            ("prop_count", self.prop_count as f64),
            ("p_full_w", self.p_full_w),
            ("v_max_mps", self.v_max_mps),
            ("speed_mps", self.speed_mps),
            ("battery_j", self.battery_j),
            ("p_static_w", self.p_static_w),
            ("alpha_uwave", self.alpha_uwave),
            ("alpha_mmwave", self.alpha_mmwave),
            ("tx_uwave_w", self.tx_uwave_w),
            ("tx_mmwave_w", self.tx_mmwave_w),
        ] {
            if !(val > 0.0 && val.is_finite()) {
                v.push(format!("{label}.{name} must be > 0 (got {val})"));
            }
        }
        if self.speed_mps > self.v_max_mps {
            v.push(format!(
                "{label}.speed_mps ({}) must not exceed v_max_mps ({})",
                self.speed_mps, self.v_max_mps
            ));
        }
        v
    }
}

/// `sqrt((m·g)³ / (2π·r²·n·ρ))`.
pub fn hover_power(d: &DroneSpec, c: &PhysicsConstants) -> f64 {
    let weight = d.mass_kg * c.gravity_mps2;
    let disk = 2.0 * std::f64::consts::PI * d.prop_radius_m.powi(2) * d.prop_count as f64 * c.air_density_kg_m3;
    (weight.powi(3) / disk).sqrt()
}

/// `P_full / v_max · v`.
pub fn transition_power(d: &DroneSpec) -> Result<f64, PowerError> {
    if d.speed_mps > d.v_max_mps {
        return Err(PowerError::SpeedAboveMax { speed: d.speed_mps, v_max: d.v_max_mps });
    }
    Ok(d.p_full_w / d.v_max_mps * d.speed_mps)
}

pub fn comm_power(d: &DroneSpec, band: Band) -> f64 {
    match band {
        Band::UWave => d.p_static_w + d.alpha_uwave * d.tx_uwave_w,
        Band::MmWave => d.p_static_w + d.alpha_mmwave * d.tx_mmwave_w,
    }
}

/// Power drawn while flying between stops: hover plus transition.
pub fn flight_power(d: &DroneSpec, c: &PhysicsConstants) -> Result<f64, PowerError> {
    Ok(hover_power(d, c) + transition_power(d)?)
}

/// Power drawn while hovering at a stop and relaying over `band`.
pub fn stop_power(d: &DroneSpec, c: &PhysicsConstants, band: Band) -> f64 {
    hover_power(d, c) + comm_power(d, band)
}

/// Energy of a tour. `legs` are flight distances in meters and must
/// include the return leg to the docking station.
pub fn tour_energy(
    d: &DroneSpec,
    c: &PhysicsConstants,
    legs: &[f64],
    stops: &[(Band, f64)],
) -> Result<f64, PowerError> {
    let flying: f64 = legs.iter().map(|l| l / d.speed_mps).sum();
    let fly = if legs.is_empty() { 0.0 } else { flight_power(d, c)? * flying };
    let hover: f64 = stops.iter().map(|(band, t)| stop_power(d, c, *band) * t).sum();
    Ok(fly + hover)
}

pub fn check_budget(energy_j: f64, d: &DroneSpec) -> bool {
    energy_j <= d.battery_j
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hover_power_table_airframe() {
        let p = hover_power(&DroneSpec::default(), &PhysicsConstants::default());
        assert!((p - 78.3).abs() < 0.1, "{p}");
        let quad = DroneSpec { prop_count: 16, ..DroneSpec::default() };
        assert!((hover_power(&quad, &PhysicsConstants::default()) - p / 2.0).abs() < 1e-9);
        let light = DroneSpec { mass_kg: 1e-9, ..DroneSpec::default() };
        assert!(hover_power(&light, &PhysicsConstants::default()) < 1e-9);
    }

    #[test]
    fn hover_power_mass_derivative() {
        // d/dm sqrt(k m³) = 1.5 P / m; central difference should match.
        let c = PhysicsConstants::default();
        let d = DroneSpec::default();
        let h = 1e-5;
        let up = hover_power(&DroneSpec { mass_kg: d.mass_kg + h, ..d.clone() }, &c);
        let dn = hover_power(&DroneSpec { mass_kg: d.mass_kg - h, ..d.clone() }, &c);
        let fd = (up - dn) / (2.0 * h);
        let exact = 1.5 * hover_power(&d, &c) / d.mass_kg;
        assert!((fd - exact).abs() / exact < 1e-6);
    }

    #[test]
    fn transition_power_examples() {
        let full = DroneSpec { v_max_mps: 20.0, speed_mps: 20.0, p_full_w: 10.0, ..DroneSpec::default() };
        assert_eq!(transition_power(&full).unwrap(), 10.0);
        let half = DroneSpec { speed_mps: 10.0, ..full.clone() };
        assert_eq!(transition_power(&half).unwrap(), 5.0);
        let parked = DroneSpec { speed_mps: 0.0, ..full.clone() };
        assert_eq!(transition_power(&parked).unwrap(), 0.0);
        let fast = DroneSpec { speed_mps: 25.0, ..full };
        assert!(matches!(transition_power(&fast), Err(PowerError::SpeedAboveMax { .. })));
    }

    #[test]
    fn comm_power_examples() {
        let d = DroneSpec::default();
        let quiet = DroneSpec { alpha_uwave: 0.0, alpha_mmwave: 0.0, ..d.clone() };
        assert_eq!(comm_power(&quiet, Band::UWave), d.p_static_w);
        assert_eq!(comm_power(&d, Band::UWave), d.p_static_w + d.alpha_uwave * d.tx_uwave_w);
        assert!((comm_power(&d, Band::MmWave) - 6.0).abs() < 0.01);
    }

    #[test]
    fn tour_energy_examples() {
        let c = PhysicsConstants::default();
        let d = DroneSpec::default();
        assert_eq!(tour_energy(&d, &c, &[], &[]).unwrap(), 0.0);
        let e = tour_energy(&d, &c, &[1500.0], &[(Band::MmWave, 10.0)]).unwrap();
        let ph = hover_power(&d, &c);
        let expect = (ph + transition_power(&d).unwrap()) * 100.0 + (ph + comm_power(&d, Band::MmWave)) * 10.0;
        assert!((e - expect).abs() < 1e-9);
        let a = tour_energy(&d, &c, &[100.0, 200.0], &[(Band::UWave, 3.0)]).unwrap();
        let b = tour_energy(&d, &c, &[300.0], &[(Band::MmWave, 4.0)]).unwrap();
        let ab = tour_energy(&d, &c, &[100.0, 200.0, 300.0], &[(Band::UWave, 3.0), (Band::MmWave, 4.0)]).unwrap();
        assert!((a + b - ab).abs() < 1e-9);
    }

    #[test]
    fn budget_is_closed() {
        let d = DroneSpec { battery_j: 1000.0, ..DroneSpec::default() };
        assert!(check_budget(0.0, &d));
        assert!(check_budget(1000.0, &d));
        assert!(!check_budget(1001.0, &d));
    }

    proptest! {
        #[test]
        fn energy_monotone(legs in proptest::collection::vec(0.0..5000.0f64, 1..6),
                           times in proptest::collection::vec(0.0..500.0f64, 1..6),
                           which in 0usize..6, extra in 0.0..100.0f64) {
            let c = PhysicsConstants::default();
            let d = DroneSpec::default();
            let stops: Vec<_> = times.iter().map(|t| (Band::MmWave, *t)).collect();
            let base = tour_energy(&d, &c, &legs, &stops).unwrap();
            let mut longer = legs.clone();
            let i = which % longer.len();
            longer[i] += extra;
            prop_assert!(tour_energy(&d, &c, &longer, &stops).unwrap() >= base);
            let mut slower = stops.clone();
            let j = which % slower.len();
            slower[j].1 += extra;
            prop_assert!(tour_energy(&d, &c, &legs, &slower).unwrap() >= base);
            let split: f64 = legs.iter().map(|l| tour_energy(&d, &c, &[*l], &[]).unwrap()).sum::<f64>()
                + stops.iter().map(|s| tour_energy(&d, &c, &[], &[*s]).unwrap()).sum::<f64>();
            prop_assert!((split - base).abs() <= 1e-9 * base.max(1.0));
        }
    }
}

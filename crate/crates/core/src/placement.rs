//! Initial stop placement: for each (pair, drone, band), the hover position
//! maximizing the decode-and-forward rate, and the resulting band choice.
//!
//! The search is a multi-start compass (pattern) search polling the 26
//! neighbours of the incumbent on a per-axis step lattice, halving the steps
//! whenever no neighbour improves. mmWave candidates without line of sight
//! on both hops are rejected outright.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{comm_time, relay_rate, Band, EnvironmentParams, RadioParams, Rate, RelayLink};
use crate::geometry::{clamp_to_region, Position3D, Region};
use crate::scenario::Scenario;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("no feasible {band} relay position found for pair {pair} and drone {drone}")]
    NoConvergence { band: Band, pair: usize, drone: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlacementParams {
    /// Step reduction factor applied after an unsuccessful poll.
    pub shrink: f64,
    /// Search stops once every step is below this, meters.
    pub min_step_m: f64,
    /// Lower bound on the initial horizontal step, meters.
    pub min_initial_step_m: f64,
    /// Hard cap on polls per start.
    pub max_polls: usize,
}

impl Default for PlacementParams {
    fn default() -> Self {
        Self { shrink: 0.5, min_step_m: 1.0, min_initial_step_m: 25.0, max_polls: 10_000 }
    }
}

/// The chosen relay configuration of one drone for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopAssignment {
    pub pair: usize,
    pub drone: usize,
    pub band: Band,
    pub position: Position3D,
    pub rate_bps: f64,
    pub comm_time_s: f64,
}

fn improves(candidate: Option<f64>, incumbent: Option<f64>) -> bool {
    match (candidate, incumbent) {
        (Some(c), Some(i)) => c > i,
        (Some(_), None) => true,
        _ => false,
    }
}

/// Best of a fixed candidate list. Equal values resolve to the
/// lexicographically smallest position.
pub fn best_candidate<F>(candidates: &[Position3D], objective: F) -> Option<(Position3D, f64)>
where
    F: Fn(&Position3D) -> Option<f64>,
{
    let mut best: Option<(Position3D, f64)> = None;
    for c in candidates {
        let Some(v) = objective(c) else { continue };
        best = match best {
            None => Some((*c, v)),
            Some((bp, bv)) if v > bv || (v == bv && c.lex_cmp(&bp).is_lt()) => Some((*c, v)),
            keep => keep,
        };
    }
    best
}

/// Compass search from one start. Returns the final incumbent, which is
/// `None` only if no evaluated point was feasible.
pub fn compass_search<F>(
    start: Position3D,
    initial_step: [f64; 3],
    region: &Region,
    params: &PlacementParams,
    objective: &F,
) -> Option<(Position3D, f64)>
where
    F: Fn(&Position3D) -> Option<f64>,
{
    let mut x = clamp_to_region(&start, region);
    let mut fx = objective(&x);
    let mut step = initial_step;
    let mut polls = 0;
    while step.iter().any(|s| *s >= params.min_step_m) && polls < params.max_polls {
        polls += 1;
        let mut best: Option<(Position3D, Option<f64>)> = None;
        for i in [-1.0, 0.0, 1.0] {
            for j in [-1.0, 0.0, 1.0] {
                for k in [-1.0, 0.0, 1.0] {
                    if i == 0.0 && j == 0.0 && k == 0.0 {
                        continue;
                    }
                    let cand = clamp_to_region(&x.offset(i * step[0], j * step[1], k * step[2]), region);
                    if cand == x {
                        continue;
                    }
                    let fc = objective(&cand);
                    if !improves(fc, fx) {
                        continue;
                    }
                    let better = match &best {
                        None => true,
                        Some((bp, bv)) => improves(fc, *bv) || (fc == *bv && cand.lex_cmp(bp).is_lt()),
                    };
                    if better {
                        best = Some((cand, fc));
                    }
                }
            }
        }
        match best {
            Some((p, v)) => {
                x = p;
                fx = v;
            }
            None => {
                for s in &mut step {
                    *s *= params.shrink;
                }
            }
        }
    }
    fx.map(|v| (x, v))
}

/// Nine starts: three points along the Tx–Rx ground track (midpoint and
/// quarter points) at three altitudes (region top, region middle, mean
/// endpoint altitude).
pub fn start_points(link: &RelayLink, region: &Region) -> Vec<Position3D> {
    let (a, b) = (link.tx.pos, link.rx.pos);
    let alts = [region.z.max, 0.5 * (region.z.min + region.z.max), region.z.clamp(0.5 * (a.z + b.z))];
    let mut out = Vec::with_capacity(9);
    for z in alts {
        for t in [0.5, 0.25, 0.75] {
            out.push(clamp_to_region(&Position3D::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), z), region));
        }
    }
    out
}

fn rate_objective<'a>(
    link: &'a RelayLink,
    band: Band,
    env: &'a EnvironmentParams,
    radio: &'a RadioParams,
) -> impl Fn(&Position3D) -> Option<f64> + 'a {
    move |p: &Position3D| relay_rate(link, band, p, 1, env, radio).ok().and_then(Rate::usable)
}

/// Rate-maximizing relay position for one band. μWave rates assume the full
/// bandwidth. `None` means no evaluated point was feasible.
pub fn optimize_stop(
    link: &RelayLink,
    band: Band,
    region: &Region,
    env: &EnvironmentParams,
    radio: &RadioParams,
    params: &PlacementParams,
) -> Option<(Position3D, f64)> {
    let objective = rate_objective(link, band, env, radio);
    let sep_h = ((link.tx.pos.x - link.rx.pos.x).powi(2) + (link.tx.pos.y - link.rx.pos.y).powi(2)).sqrt();
    let h = (0.25 * sep_h).max(params.min_initial_step_m);
    let step = [h, h, (0.25 * region.z.span()).max(params.min_step_m)];
    let finals: Vec<Position3D> = start_points(link, region)
        .into_iter()
        .filter_map(|s| compass_search(s, step, region, params, &objective).map(|(p, _)| p))
        .collect();
    best_candidate(&finals, &objective)
}

/// Placement for a scenario's (pair, drone, band).
pub fn optimize_stop_for(
    scenario: &Scenario,
    pair: usize,
    drone: usize,
    band: Band,
    params: &PlacementParams,
) -> Result<(Position3D, f64), PlacementError> {
    let link = scenario.relay_link(pair, drone);
    optimize_stop(&link, band, &scenario.region, &scenario.env, &scenario.radio, params)
        .ok_or(PlacementError::NoConvergence { band, pair, drone })
}

/// mmWave whenever a feasible mmWave stop exists, μWave otherwise.
pub fn select_band(
    scenario: &Scenario,
    pair: usize,
    drone: usize,
    params: &PlacementParams,
) -> Result<StopAssignment, PlacementError> {
    let bits = scenario.pairs[pair].message_bits;
    let (band, (position, rate)) = match optimize_stop_for(scenario, pair, drone, Band::MmWave, params) {
        Ok(found) => (Band::MmWave, found),
        Err(_) => (Band::UWave, optimize_stop_for(scenario, pair, drone, Band::UWave, params)?),
    };
    let comm_time_s = comm_time(bits, Rate::Bps(rate)).expect("placement only returns positive rates");
    Ok(StopAssignment { pair, drone, band, position, rate_bps: rate, comm_time_s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{dbm_to_watts, hop_snrs, los_probability, BandPower, Node};
    use crate::geometry::Interval;
    use crate::scenario::{GenerateOverrides, Pair};

    fn link(tx: Node, rx: Node) -> RelayLink {
        let p = BandPower { uwave_w: dbm_to_watts(23.0), mmwave_w: dbm_to_watts(24.0) };
        RelayLink { tx, rx, source_power: p, relay_power: p }
    }

    #[test]
    fn best_of_two_candidates() {
        let a = Position3D::new(0.0, 0.0, 0.0);
        let b = Position3D::new(1.0, 0.0, 0.0);
        let f = |p: &Position3D| Some(if p.x > 0.5 { 2.0 } else { 1.0 });
        assert_eq!(best_candidate(&[a, b], f), Some((b, 2.0)));
        let flat = |_: &Position3D| Some(1.0);
        assert_eq!(best_candidate(&[b, a], flat), Some((a, 1.0)));
    }

    #[test]
    fn symmetric_air_pair_balances_hops() {
        let env = EnvironmentParams::default();
        let radio = RadioParams::default();
        let region = Region::default();
        let l = link(
            Node::air(Position3D::new(1000.0, 2000.0, 100.0)),
            Node::air(Position3D::new(2200.0, 2500.0, 100.0)),
        );
        for band in [Band::UWave, Band::MmWave] {
            let (pos, _) = optimize_stop(&l, band, &region, &env, &radio, &PlacementParams::default()).unwrap();
            let (s1, s2) = hop_snrs(&l, band, &pos, &env, &radio).unwrap();
            assert!((s1 - s2).abs() / s1.max(s2) < 0.01, "{band}: {s1} vs {s2} at {pos:?}");
        }
    }

    #[test]
    fn search_never_worse_than_midpoint_start() {
        let env = EnvironmentParams::default();
        let radio = RadioParams::default();
        let region = Region::default();
        let l = link(
            Node::ground(Position3D::new(800.0, 900.0, 0.0)),
            Node::ground(Position3D::new(2100.0, 1500.0, 0.0)),
        );
        let f = rate_objective(&l, Band::UWave, &env, &radio);
        let (pos, r) = optimize_stop(&l, Band::UWave, &region, &env, &radio, &PlacementParams::default()).unwrap();
        assert!(region.contains(&pos));
        for s in start_points(&l, &region) {
            assert!(r >= f(&s).unwrap());
        }
    }

    #[test]
    fn placement_is_deterministic() {
        let s = crate::scenario::generate(5, 3, 2, &GenerateOverrides::default()).unwrap();
        let params = PlacementParams::default();
        for n in 0..3 {
            assert_eq!(select_band(&s, n, 0, &params).unwrap(), select_band(&s, n, 0, &params).unwrap());
        }
    }

    fn separated_scenario(sep: f64) -> Scenario {
        let mut s = crate::scenario::generate(1, 1, 1, &GenerateOverrides::default()).unwrap();
        s.region = Region::new(Interval::new(0.0, 12000.0), Interval::new(0.0, 5000.0), Interval::new(0.0, 200.0)).unwrap();
        s.pairs[0] = Pair {
            tx_m: Position3D::new(500.0, 2500.0, 0.0),
            rx_m: Position3D::new(500.0 + sep, 2500.0, 0.0),
            tx_power_uwave_w: None,
            tx_power_mmwave_w: None,
            ..s.pairs[0].clone()
        };
        s
    }

    #[test]
    fn far_pair_falls_back_to_uwave() {
        let s = separated_scenario(10_000.0);
        // Coarse grid check: no point of the region sees both ends with p_LoS >= 1 - ε.
        let thr = 1.0 - s.env.los_epsilon;
        let (tx, rx) = (s.pairs[0].tx_m, s.pairs[0].rx_m);
        for i in 0..=120 {
            for k in 0..=8 {
                let p = Position3D::new(i as f64 * 100.0, 2500.0, 1.0 + k as f64 * 24.875);
                let a = los_probability(&tx, &p, &s.env).unwrap();
                let b = los_probability(&rx, &p, &s.env).unwrap();
                assert!(a < thr || b < thr);
            }
        }
        let params = PlacementParams::default();
        assert_eq!(
            optimize_stop_for(&s, 0, 0, Band::MmWave, &params),
            Err(PlacementError::NoConvergence { band: Band::MmWave, pair: 0, drone: 0 })
        );
        let a = select_band(&s, 0, 0, &params).unwrap();
        assert_eq!(a.band, Band::UWave);
        assert_eq!(a.band.flag(), 1);
        assert!(a.rate_bps > 0.0 && a.comm_time_s > 0.0);
    }

    #[test]
    fn short_pair_prefers_mmwave() {
        let s = separated_scenario(200.0);
        let a = select_band(&s, 0, 0, &PlacementParams::default()).unwrap();
        assert_eq!(a.band, Band::MmWave);
        let uw = optimize_stop_for(&s, 0, 0, Band::UWave, &PlacementParams::default()).unwrap();
        assert!(a.rate_bps > uw.1);
    }

    #[test]
    fn drones_with_different_power_may_stop_elsewhere() {
        let mut s = separated_scenario(1500.0);
        s.drones.push(s.drones[0].clone());
        s.drones[0].tx_uwave_w = dbm_to_watts(36.0);
        s.drones[1].tx_uwave_w = dbm_to_watts(-10.0);
        let params = PlacementParams::default();
        let a = select_band(&s, 0, 0, &params).unwrap();
        let b = select_band(&s, 0, 1, &params).unwrap();
        assert_eq!((a.band, b.band), (Band::UWave, Band::UWave));
        // The weak relay must sit nearer the receiver to balance the hops.
        assert!(b.position.x > a.position.x + 1.0, "{:?} {:?}", a.position, b.position);
    }
}

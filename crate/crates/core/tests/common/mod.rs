#![allow(dead_code)]

use relayplan::channel::EnvironmentParams;
use relayplan::geometry::{Interval, Position3D};
use relayplan::planner::{initial_stops, plan_from_stops, summarize, Metrics, Mode, Plan, PlannerConfig, WeightsMode};
use relayplan::scenario::{generate, GenerateOverrides, Scenario, BITS_PER_MB};

pub const FIXTURE_SEED: u64 = 0;
pub const UWAVE_SEPARATION_M: f64 = 2000.0;

/// Ten pairs in suburban terrain where every pair but the first is close
/// enough for mmWave; pair 0 is stretched to 2 km so that only μWave can
/// serve it and given the largest message. Drones are identical, weights
/// follow message sizes.
pub fn isolated_uwave_fixture(seed: u64, n_drones: usize) -> Scenario {
    let o = GenerateOverrides {
        env: Some(EnvironmentParams::suburban()),
        rx_distance_m: Some(Interval::new(300.0, 1000.0)),
        uwave_power_dbm: Some(Interval::new(23.0, 23.0)),
        speed_mps: Some(Interval::new(15.0, 15.0)),
        weights_by_message: true,
        ..GenerateOverrides::default()
    };
    let mut s = generate(seed, 10, n_drones, &o).expect("fixture generation");
    let tx = s.pairs[0].tx_m;
    let rx = (0..72)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 72.0;
            Position3D::new(tx.x + UWAVE_SEPARATION_M * a.cos(), tx.y + UWAVE_SEPARATION_M * a.sin(), tx.z)
        })
        .find(|p| s.region.contains(p))
        .expect("region fits a 2 km pair");
    s.pairs[0].rx_m = rx;
    s.pairs[0].message_bits = 625.0 * BITS_PER_MB;
    s
}

pub struct SweepRow {
    pub drones: usize,
    pub milp: (Plan, Metrics),
    pub full: (Plan, Metrics),
}

/// Plans the fixture for every drone count in `1..=max_drones` in both
/// modes, placing stops once for the largest fleet.
pub fn sweep(s: &Scenario, max_drones: usize) -> Vec<SweepRow> {
    let big = s.with_drone_count(max_drones);
    let stops = initial_stops(&big, &Default::default()).expect("placement");
    (1..=max_drones)
        .map(|d| {
            let sd = s.with_drone_count(d);
            let run = |mode| {
                let cfg = PlannerConfig { mode, weights: WeightsMode::MessageProportional, ..PlannerConfig::default() };
                let p = plan_from_stops(&sd, &cfg, stops[..d].to_vec()).expect("plan");
                let m = summarize(&sd, &p);
                (p, m)
            };
            SweepRow { drones: d, milp: run(Mode::Milp), full: run(Mode::Full) }
        })
        .collect()
}

/// Qualitative drone-count trends; returns a description of every failure.
pub fn trend_failures(rows: &[SweepRow], uwave_pair: usize) -> Vec<String> {
    let mut out = Vec::new();
    for w in rows.windows(2) {
        let (a, b) = (&w[0].full.1, &w[1].full.1);
        if b.total_service_time_s > a.total_service_time_s + 1e-9 {
            out.push(format!("total service time rises from D={} to D={}", w[0].drones, w[1].drones));
        }
    }
    for r in rows {
        if r.full.1.weighted_objective_s > r.milp.1.weighted_objective_s + 1e-9 {
            out.push(format!("search objective above MILP objective at D={}", r.drones));
        }
    }
    let dedicated = |r: &SweepRow| r.full.0.routing.tours.iter().any(|t| t.as_slice() == [uwave_pair]);
    match rows.iter().position(dedicated) {
        None => out.push("the uWave pair never gets a dedicated drone".into()),
        Some(k) => {
            let plateau = rows[k].full.1.latest_service_time_s;
            for r in &rows[k..] {
                let m = &r.full.1;
                let s0 = r.full.0.routing.service_time_s[uwave_pair];
                if (m.latest_service_time_s - s0).abs() > 1e-9 {
                    out.push(format!("latest service at D={} is not the uWave pair", r.drones));
                }
                if (m.latest_service_time_s - plateau).abs() > 1e-6 * plateau {
                    out.push(format!("latest service time moves after D={} (D={})", rows[k].drones, r.drones));
                }
            }
            for w in rows[..=k].windows(2) {
                if w[1].full.1.latest_service_time_s > w[0].full.1.latest_service_time_s + 1e-9 {
                    out.push(format!("latest service time rises from D={} to D={}", w[0].drones, w[1].drones));
                }
            }
        }
    }
    out
}

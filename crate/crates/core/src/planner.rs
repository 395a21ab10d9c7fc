//! Band selection, exact routing and stop refinement, iterated to a fixed
//! point.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{comm_time, relay_rate, Band};
use crate::geometry::distance;
use crate::placement::{select_band, PlacementError, PlacementParams, StopAssignment};
use crate::power::{flight_power, tour_energy, PowerError};
use crate::refinement::{refine_tour, ChannelEvaluator, CuboidSearchParams, TourContext, TourStop};
use crate::routing::{audit, build_instance, evaluate, solve_exact, weighted_objective, Routing, RoutingError};
use crate::scenario::{validate, Scenario, Violation};

/// Allowed increase of the objective between passes before the planner
/// reports a monotonicity failure.
pub const MONOTONE_SLACK_S: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid scenario: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidScenario(Vec<Violation>),
    #[error("invalid planner config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("scenario has no drones")]
    NoDrones,
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error("objective rose from {before} s to {after} s in pass {pass}")]
    NotMonotone { pass: usize, before: f64, after: f64 },
    #[error("plan failed its audit: {}", .0.join("; "))]
    Audit(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsMode {
    #[default]
    Uniform,
    MessageProportional,
    /// Use the weights stored in the scenario.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Band selection and routing only.
    Milp,
    /// Routing alternated with stop refinement.
    #[default]
    Full,
}

mod upsilon_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub mode: Mode,
    pub weights: WeightsMode,
    #[serde(with = "upsilon_serde")]
    pub convergence_upsilon_s: f64,
    pub max_iterations: usize,
    pub placement: PlacementParams,
    pub search: CuboidSearchParams,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            weights: WeightsMode::Uniform,
            convergence_upsilon_s: 0.1,
            max_iterations: 20,
            placement: PlacementParams::default(),
            search: CuboidSearchParams::default(),
        }
    }
}

impl PlannerConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.search.violations();
        if self.convergence_upsilon_s.is_nan() || self.convergence_upsilon_s < 0.0 {
            v.push(format!("convergence_upsilon_s must be >= 0 (got {})", self.convergence_upsilon_s));
        }
        if self.max_iterations == 0 {
            v.push("max_iterations must be >= 1".into());
        }
        v
    }
}

/// Objective values of one Step 2 / Step 3 pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub routing_objective_s: f64,
    /// After refinement; equals the routing objective in MILP mode.
    pub objective_s: f64,
    pub stops_moved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub weights: Vec<f64>,
    pub n_uwave: usize,
    /// Final stop of every (pair, drone), indexed `[drone][pair]`.
    pub stops: Vec<Vec<StopAssignment>>,
    pub routing: Routing,
    pub history: Vec<PassRecord>,
    pub milp_objective_s: f64,
    pub converged: bool,
}

impl Plan {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    /// Stops visited by `drone`, in tour order.
    pub fn tour_stops(&self, drone: usize) -> Vec<&StopAssignment> {
        self.routing.tours[drone].iter().map(|&n| &self.stops[drone][n]).collect()
    }

    pub fn objective_history(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.objective_s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub weighted_objective_s: f64,
    pub total_service_time_s: f64,
    pub latest_service_time_s: f64,
    pub energy_j: Vec<f64>,
    /// Flown distance per drone, return leg included.
    pub tour_length_m: Vec<f64>,
    pub n_uwave: usize,
    pub iterations: usize,
    pub converged: bool,
    pub milp_objective_s: f64,
}

pub fn weights_for(scenario: &Scenario, mode: WeightsMode) -> Vec<f64> {
    let n = scenario.n_pairs();
    match mode {
        WeightsMode::Uniform => vec![1.0 / n as f64; n],
        WeightsMode::MessageProportional => {
            let total: f64 = scenario.pairs.iter().map(|p| p.message_bits).sum();
            scenario.pairs.iter().map(|p| p.message_bits / total).collect()
        }
        WeightsMode::Explicit => scenario.weights(),
    }
}

/// Drones sharing the μWave band: drones with at least one μWave stop,
/// capped by the number of pairs that need μWave, since each pair is served
/// by a single drone.
pub fn uwave_drone_count(stops: &[Vec<StopAssignment>]) -> usize {
    let drones = stops.iter().filter(|row| row.iter().any(|s| s.band == Band::UWave)).count();
    let n = stops.first().map_or(0, |r| r.len());
    let pairs = (0..n).filter(|&p| stops.iter().any(|row| row[p].band == Band::UWave)).count();
    drones.min(pairs)
}

/// Weighted sum of per-pair service times.
pub fn objective(routing: &Routing, weights: &[f64]) -> f64 {
    weighted_objective(&routing.service_time_s, weights)
}

fn recompute_rate(scenario: &Scenario, s: &mut StopAssignment, n_uwave: usize) -> Result<(), PlanError> {
    let link = scenario.relay_link(s.pair, s.drone);
    let rate = relay_rate(&link, s.band, &s.position, n_uwave, &scenario.env, &scenario.radio)
        .ok()
        .and_then(|r| r.usable())
        .ok_or(PlacementError::NoConvergence { band: s.band, pair: s.pair, drone: s.drone })?;
    s.rate_bps = rate;
    s.comm_time_s = scenario.pairs[s.pair].message_bits / rate;
    Ok(())
}

/// Step 1 for every (pair, drone), `[drone][pair]`. μWave rates assume
/// the full bandwidth; [`plan_from_stops`] rescales them.
pub fn initial_stops(scenario: &Scenario, params: &PlacementParams) -> Result<Vec<Vec<StopAssignment>>, PlanError> {
    (0..scenario.n_drones())
        .map(|d| (0..scenario.n_pairs()).map(|n| select_band(scenario, n, d, params)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(PlanError::from)
}

fn refine_drone(
    scenario: &Scenario,
    config: &PlannerConfig,
    weights: &[f64],
    n_uwave: usize,
    drone: usize,
    tour: &[usize],
    row: &mut [StopAssignment],
) -> Result<bool, PlanError> {
    let spec = &scenario.drones[drone];
    let ctx = TourContext {
        docking_station: scenario.docking_station_m,
        speed_mps: spec.speed_mps,
        flight_power_w: flight_power(spec, &scenario.physics)?,
        battery_j: spec.battery_j,
        weights,
    };
    let eval = ChannelEvaluator { scenario, drone, bands: row.iter().map(|s| s.band).collect(), n_uwave };
    let stops: Vec<TourStop> = tour
        .iter()
        .map(|&n| {
            let s = &row[n];
            TourStop {
                pair: n,
                position: s.position,
                cost: crate::refinement::StopCost {
                    comm_time_s: s.comm_time_s,
                    power_w: crate::power::stop_power(spec, &scenario.physics, s.band),
                },
            }
        })
        .collect();
    let refined = refine_tour(&ctx, &stops, &scenario.region, &config.search, &eval);
    for t in &refined.stops {
        let s = &mut row[t.pair];
        s.position = t.position;
        s.comm_time_s = t.cost.comm_time_s;
        s.rate_bps = scenario.pairs[t.pair].message_bits / t.cost.comm_time_s;
    }
    Ok(refined.moved())
}

/// Runs the whole pipeline on `scenario`.
pub fn plan(scenario: &Scenario, config: &PlannerConfig) -> Result<Plan, PlanError> {
    let violations = validate(scenario);
    if !violations.is_empty() {
        return Err(PlanError::InvalidScenario(violations));
    }
    let bad = config.violations();
    if !bad.is_empty() {
        return Err(PlanError::InvalidConfig(bad));
    }
    if scenario.n_drones() == 0 {
        return Err(PlanError::NoDrones);
    }
    let stops = initial_stops(scenario, &config.placement)?;
    plan_from_stops(scenario, config, stops)
}

/// Steps 2 to 4 from the output of [`initial_stops`] for this scenario's
/// drones.
pub fn plan_from_stops(
    scenario: &Scenario,
    config: &PlannerConfig,
    mut stops: Vec<Vec<StopAssignment>>,
) -> Result<Plan, PlanError> {
    stops.truncate(scenario.n_drones());
    let n_uwave = uwave_drone_count(&stops);
    for s in stops.iter_mut().flatten().filter(|s| s.band == Band::UWave) {
        recompute_rate(scenario, s, n_uwave)?;
    }
    let weights = weights_for(scenario, config.weights);
    let mut history: Vec<PassRecord> = Vec::new();
    let mut milp_objective_s = f64::NAN;
    let mut prev_tours: Option<Vec<Vec<usize>>> = None;
    let mut converged = false;
    let mut routing = None;

    for pass in 1..=config.max_iterations {
        let flat: Vec<StopAssignment> = stops.iter().flatten().cloned().collect();
        let inst = build_instance(scenario, &flat, &weights)?;
        let r = solve_exact(&inst)?;
        let routing_obj = r.objective_s;
        if pass == 1 {
            milp_objective_s = routing_obj;
        }
        if let Some(last) = history.last() {
            if routing_obj > last.objective_s + MONOTONE_SLACK_S {
                return Err(PlanError::NotMonotone { pass, before: last.objective_s, after: routing_obj });
            }
        }
        let (objective_s, moved) = match config.mode {
            Mode::Milp => (routing_obj, false),
            Mode::Full => {
                let mut moved = false;
                for (d, tour) in r.tours.iter().enumerate() {
                    moved |= refine_drone(scenario, config, &weights, n_uwave, d, tour, &mut stops[d])?;
                }
                // Scored with the same tables and summation as Step 2.
                let flat: Vec<StopAssignment> = stops.iter().flatten().cloned().collect();
                let refined = evaluate(r.tours.clone(), &build_instance(scenario, &flat, &weights)?)?;
                (refined.objective_s, moved)
            }
        };
        if objective_s > routing_obj + MONOTONE_SLACK_S {
            return Err(PlanError::NotMonotone { pass, before: routing_obj, after: objective_s });
        }
        let prev = history.last().map_or(routing_obj, |h| h.objective_s);
        history.push(PassRecord { routing_objective_s: routing_obj, objective_s, stops_moved: moved });
        let repeated = !moved && prev_tours.as_ref() == Some(&r.tours);
        prev_tours = Some(r.tours.clone());
        routing = Some(r);
        if config.mode == Mode::Milp || prev - objective_s <= config.convergence_upsilon_s || repeated {
            converged = true;
            break;
        }
    }

    let tours = routing.expect("max_iterations >= 1").tours;
    let flat: Vec<StopAssignment> = stops.iter().flatten().cloned().collect();
    let inst = build_instance(scenario, &flat, &weights)?;
    let routing = evaluate(tours, &inst)?;
    let plan = Plan { weights, n_uwave, stops, routing, history, milp_objective_s, converged };
    let problems = audit_plan(scenario, &plan);
    if !problems.is_empty() {
        return Err(PlanError::Audit(problems));
    }
    Ok(plan)
}

/// Independent checks of a finished plan against the scenario: routing
/// constraints, region membership, band usability at every visited stop,
/// and energy recomputed from geometry.
pub fn audit_plan(scenario: &Scenario, plan: &Plan) -> Vec<String> {
    let mut out = Vec::new();
    let flat: Vec<StopAssignment> = plan.stops.iter().flatten().cloned().collect();
    let inst = match build_instance(scenario, &flat, &plan.weights) {
        Ok(i) => i,
        Err(e) => return vec![e.to_string()],
    };
    out.extend(audit(&plan.routing, &inst).into_iter().map(|v| format!("{}: {}", v.constraint, v.detail)));
    for (d, tour) in plan.routing.tours.iter().enumerate() {
        let spec = &scenario.drones[d];
        let mut prev = scenario.docking_station_m;
        let mut legs = Vec::new();
        let mut hover = Vec::new();
        for &n in tour {
            let s = &plan.stops[d][n];
            if !scenario.region.contains(&s.position) {
                out.push(format!("drone {d} stop for pair {n} lies outside the region"));
            }
            let link = scenario.relay_link(n, d);
            let rate = relay_rate(&link, s.band, &s.position, plan.n_uwave, &scenario.env, &scenario.radio);
            match rate.ok().and_then(|r| comm_time(scenario.pairs[n].message_bits, r).ok()) {
                Some(t) if (t - s.comm_time_s).abs() <= 1e-9 * t.max(1.0) => {}
                Some(t) => out.push(format!("drone {d} pair {n}: relay time {} s, recomputed {t} s", s.comm_time_s)),
                None => out.push(format!("drone {d} pair {n}: {} unusable at its stop", s.band)),
            }
            legs.push(distance(&prev, &s.position));
            hover.push((s.band, s.comm_time_s));
            prev = s.position;
        }
        if !tour.is_empty() {
            legs.push(distance(&prev, &scenario.docking_station_m));
        }
        match tour_energy(spec, &scenario.physics, &legs, &hover) {
            Ok(e) => {
                if e > spec.battery_j {
                    out.push(format!("drone {d} needs {e} J of {} J", spec.battery_j));
                }
                if (e - plan.routing.energy_j[d]).abs() > 1e-6 * e.max(1.0) {
                    out.push(format!("drone {d} energy {} J, recomputed {e} J", plan.routing.energy_j[d]));
                }
            }
            Err(e) => out.push(e.to_string()),
        }
    }
    out
}

pub fn summarize(scenario: &Scenario, plan: &Plan) -> Metrics {
    let s = &plan.routing.service_time_s;
    let tour_length_m = plan
        .routing
        .tours
        .iter()
        .enumerate()
        .map(|(d, tour)| {
            let mut prev = scenario.docking_station_m;
            let mut len = 0.0;
            for &n in tour {
                let p = plan.stops[d][n].position;
                len += distance(&prev, &p);
                prev = p;
            }
            if !tour.is_empty() {
                len += distance(&prev, &scenario.docking_station_m);
            }
            len
        })
        .collect();
    Metrics {
        weighted_objective_s: plan.routing.objective_s,
        total_service_time_s: s.iter().sum(),
        latest_service_time_s: s.iter().copied().fold(0.0, f64::max),
        energy_j: plan.routing.energy_j.clone(),
        tour_length_m,
        n_uwave: plan.n_uwave,
        iterations: plan.iterations(),
        converged: plan.converged,
        milp_objective_s: plan.milp_objective_s,
    }
}

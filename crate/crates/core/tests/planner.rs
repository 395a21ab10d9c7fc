mod common;

use relayplan::channel::Band;
use relayplan::planner::{audit_plan, plan, summarize, Mode, PlanError, PlannerConfig, WeightsMode};
use relayplan::routing::{service_times, RoutingError};
use relayplan::scenario::{generate, GenerateOverrides};

fn check_history(p: &relayplan::planner::Plan) {
    let h = p.objective_history();
    assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{h:?}");
    for r in &p.history {
        assert!(r.objective_s <= r.routing_objective_s + 1e-9);
    }
    assert!(p.routing.objective_s <= p.milp_objective_s + 1e-9);
}

#[test]
fn single_pair_single_drone() {
    let s = generate(5, 1, 1, &GenerateOverrides::default()).unwrap();
    let p = plan(&s, &PlannerConfig::default()).unwrap();
    assert_eq!(p.routing.tours, vec![vec![0]]);
    assert!(p.converged);
    let m = summarize(&s, &p);
    assert_eq!(m.total_service_time_s, m.latest_service_time_s);
    assert_eq!(m.total_service_time_s, p.routing.service_time_s[0]);
    assert!(audit_plan(&s, &p).is_empty());
}

#[test]
fn infinite_upsilon_runs_one_pass() {
    let s = generate(2, 6, 2, &GenerateOverrides::default()).unwrap();
    let cfg = PlannerConfig { convergence_upsilon_s: f64::INFINITY, ..PlannerConfig::default() };
    let p = plan(&s, &cfg).unwrap();
    assert_eq!(p.iterations(), 1);
    check_history(&p);
    let milp = plan(&s, &PlannerConfig { mode: Mode::Milp, ..PlannerConfig::default() }).unwrap();
    assert_eq!(milp.iterations(), 1);
    assert_eq!(milp.routing.objective_s, p.milp_objective_s);
}

#[test]
fn planning_is_deterministic_and_audited() {
    for seed in [1, 9, 23] {
        let s = generate(seed, 8, 3, &GenerateOverrides::default()).unwrap();
        let cfg = PlannerConfig::default();
        let a = plan(&s, &cfg).unwrap();
        let b = plan(&s, &cfg).unwrap();
        assert_eq!(a, b);
        check_history(&a);
        assert!(audit_plan(&s, &a).is_empty());
        let flat: Vec<_> = a.stops.iter().flatten().cloned().collect();
        let inst = relayplan::routing::build_instance(&s, &flat, &a.weights).unwrap();
        let st = service_times(&a.routing.tours, &inst).unwrap();
        for (x, y) in st.iter().zip(&a.routing.service_time_s) {
            assert!((x - y).abs() <= 1e-9);
        }
    }
}

#[test]
fn small_batteries_are_infeasible() {
    let o = GenerateOverrides { battery_j: Some(1000.0), ..GenerateOverrides::default() };
    let s = generate(3, 4, 2, &o).unwrap();
    match plan(&s, &PlannerConfig::default()) {
        Err(PlanError::Routing(RoutingError::Infeasible)) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let mut s = generate(3, 2, 1, &GenerateOverrides::default()).unwrap();
    let bad = PlannerConfig { max_iterations: 0, ..PlannerConfig::default() };
    assert!(matches!(plan(&s, &bad), Err(PlanError::InvalidConfig(_))));
    s.drones[0].mass_kg = -1.0;
    assert!(matches!(plan(&s, &PlannerConfig::default()), Err(PlanError::InvalidScenario(_))));
}

#[test]
fn fixture_has_one_uwave_pair() {
    let s = common::isolated_uwave_fixture(common::FIXTURE_SEED, 2);
    let cfg = PlannerConfig { weights: WeightsMode::MessageProportional, ..PlannerConfig::default() };
    let p = plan(&s, &cfg).unwrap();
    assert_eq!(p.n_uwave, 1);
    for row in &p.stops {
        assert_eq!(row[0].band, Band::UWave);
        assert!(row[1..].iter().all(|x| x.band == Band::MmWave));
    }
    check_history(&p);
    assert!(p.routing.objective_s < p.milp_objective_s);
}

#[test]
fn single_drone_serves_uwave_pair_last() {
    let s = common::isolated_uwave_fixture(common::FIXTURE_SEED, 1);
    let cfg = PlannerConfig { weights: WeightsMode::MessageProportional, ..PlannerConfig::default() };
    let p = plan(&s, &cfg).unwrap();
    assert_eq!(p.routing.tours[0].last(), Some(&0));
    let m = summarize(&s, &p);
    assert_eq!(m.latest_service_time_s, p.routing.service_time_s[0]);
}

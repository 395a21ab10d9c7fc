//! Drone-to-pair assignment and tour sequencing with fixed stops.
//!
//! The routing problem is solved to proven optimality with a two-level
//! dynamic program:
//!
//! * per drone, a backward sequencing recursion over (subset, first stop)
//!   states. Cost-to-go of a subset `U` entered at stop `j` is
//!   `W(U)·c_j + min_k [W(U∖j)·f(j,k) + h(U∖j, k)]`, where `W` sums pair
//!   weights. When the battery can bind, each state keeps the Pareto front of
//!   (cost, remaining flight time) so energy-feasible orders are never lost;
//! * across drones, a subset-partition recursion
//!   `F_d(U) = min_{V⊆U} F_{d−1}(U∖V) + best_d(V)`.
//!
//! The reported service times are always recomputed from the tours with the
//! forward recursion `S = S_prev + T^f + T^c` and every solution can be
//! checked against the precedence-variable constraints with [`audit`].

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{distance, Position3D};
use crate::placement::StopAssignment;
use crate::power::{flight_power, stop_power, PowerError};
use crate::scenario::Scenario;

/// Node index of the docking station in the flight tables.
pub const DS: usize = 0;
pub const MAX_EXACT_PAIRS: usize = 16;
pub const MAX_BRUTE_FORCE_PAIRS: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("no stop assignment for pair {pair} and drone {drone}")]
    MissingAssignment { pair: usize, drone: usize },
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error("energy budgets of the drones cannot cover all pairs; provide more energy or drones")]
    Infeasible,
    #[error("pair {0} is not served by any tour")]
    PairUnserved(usize),
    #[error("pair {0} appears more than once in the tours")]
    PairRepeated(usize),
    #[error("tours reference pair {0} which does not exist")]
    UnknownPair(usize),
    #[error("expected {expected} tours, got {got}")]
    TourCount { expected: usize, got: usize },
    #[error("instance with {n} pairs exceeds the limit of {limit} for this solver")]
    TooLarge { n: usize, limit: usize },
}

/// Tabulated flight and communication data for one routing solve.
///
/// `flight_time_s[d][m][n]` is the flying time of drone `d` from node `m` to
/// node `n`, where node 0 is the docking station and node `i + 1` is the stop
/// of pair `i`. `comm_time_s[d][n]` is the relay time of pair `n` by drone `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingInstance {
    pub n_pairs: usize,
    pub n_drones: usize,
    pub flight_time_s: Vec<Vec<Vec<f64>>>,
    pub comm_time_s: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Hover plus transition power while flying, per drone.
    pub flight_power_w: Vec<f64>,
    /// Hover plus communication power while relaying, `[d][n]`.
    pub stop_power_w: Vec<Vec<f64>>,
    pub battery_j: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Routing {
    /// Ordered pair indices per drone; empty tours stay at the DS.
    pub tours: Vec<Vec<usize>>,
    pub service_time_s: Vec<f64>,
    pub energy_j: Vec<f64>,
    pub objective_s: f64,
}

impl RoutingInstance {
    pub fn flight(&self, d: usize, from: usize, to: usize) -> f64 {
        self.flight_time_s[d][from][to]
    }

    /// Energy of drone `d` flying `tour` and returning to the DS.
    pub fn tour_energy(&self, d: usize, tour: &[usize]) -> f64 {
        if tour.is_empty() {
            return 0.0;
        }
        let mut prev = DS;
        let mut fly = 0.0;
        let mut hover = 0.0;
        for &n in tour {
            fly += self.flight(d, prev, n + 1);
            hover += self.stop_power_w[d][n] * self.comm_time_s[d][n];
            prev = n + 1;
        }
        fly += self.flight(d, prev, DS);
        self.flight_power_w[d] * fly + hover
    }

    /// Upper bound on any service time, for big-M linearizations:
    /// all relay times plus the longest outgoing leg from every node.
    pub fn big_m(&self) -> f64 {
        let comm: f64 = (0..self.n_pairs)
            .map(|n| (0..self.n_drones).map(|d| self.comm_time_s[d][n]).fold(0.0, f64::max))
            .sum();
        let fly: f64 = (0..=self.n_pairs)
            .map(|m| {
                (0..self.n_drones)
                    .flat_map(|d| self.flight_time_s[d][m].iter().copied())
                    .fold(0.0, f64::max)
            })
            .sum();
        comm + fly
    }

    /// JSON dump for cross-checking with an external MILP solver.
    pub fn dump(&self) -> String {
        let doc = serde_json::json!({
            "schema_version": crate::scenario::SCHEMA_VERSION,
            "instance": self,
            "big_m_s": self.big_m(),
        });
        serde_json::to_string_pretty(&doc).expect("instance serialization is infallible")
    }

    pub fn from_dump(text: &str) -> Result<Self, serde_json::Error> {
        #[derive(Deserialize)]
        struct Doc {
            instance: RoutingInstance,
        }
        serde_json::from_str::<Doc>(text).map(|d| d.instance)
    }
}

/// Tabulates flight and communication times for every (pair, drone) stop.
/// `stops` must hold exactly one assignment per (pair, drone); their
/// `comm_time_s` is used as is.
pub fn build_instance(
    scenario: &Scenario,
    stops: &[StopAssignment],
    weights: &[f64],
) -> Result<RoutingInstance, RoutingError> {
    let n = scenario.n_pairs();
    let nd = scenario.n_drones();
    let mut grid: Vec<Vec<Option<&StopAssignment>>> = vec![vec![None; n]; nd];
    for s in stops {
        if s.pair < n && s.drone < nd {
            grid[s.drone][s.pair] = Some(s);
        }
    }
    let mut flight = Vec::with_capacity(nd);
    let mut comm = Vec::with_capacity(nd);
    let mut stop_w = Vec::with_capacity(nd);
    let mut fly_w = Vec::with_capacity(nd);
    for (d, row) in grid.iter().enumerate() {
        let drone = &scenario.drones[d];
        let mut pts = vec![scenario.docking_station_m];
        for (p, cell) in row.iter().enumerate() {
            let s = cell.ok_or(RoutingError::MissingAssignment { pair: p, drone: d })?;
            pts.push(s.position);
        }
        let table: Vec<Vec<f64>> = pts
            .iter()
            .map(|a| pts.iter().map(|b| distance(a, b) / drone.speed_mps).collect())
            .collect();
        flight.push(table);
        comm.push(row.iter().map(|c| c.unwrap().comm_time_s).collect());
        stop_w.push(row.iter().map(|c| stop_power(drone, &scenario.physics, c.unwrap().band)).collect());
        fly_w.push(flight_power(drone, &scenario.physics)?);
    }
    Ok(RoutingInstance {
        n_pairs: n,
        n_drones: nd,
        flight_time_s: flight,
        comm_time_s: comm,
        weights: weights.to_vec(),
        flight_power_w: fly_w,
        stop_power_w: stop_w,
        battery_j: scenario.drones.iter().map(|d| d.battery_j).collect(),
    })
}

fn check_cover(tours: &[Vec<usize>], inst: &RoutingInstance) -> Result<(), RoutingError> {
    if tours.len() != inst.n_drones {
        return Err(RoutingError::TourCount { expected: inst.n_drones, got: tours.len() });
    }
    let mut seen = vec![false; inst.n_pairs];
    for &n in tours.iter().flatten() {
        if n >= inst.n_pairs {
            return Err(RoutingError::UnknownPair(n));
        }
        if std::mem::replace(&mut seen[n], true) {
            return Err(RoutingError::PairRepeated(n));
        }
    }
    match seen.iter().position(|s| !s) {
        Some(n) => Err(RoutingError::PairUnserved(n)),
        None => Ok(()),
    }
}

/// Service time of every pair: prefix sums of flight plus relay time along
/// each tour, starting from the DS at time zero.
pub fn service_times(tours: &[Vec<usize>], inst: &RoutingInstance) -> Result<Vec<f64>, RoutingError> {
    check_cover(tours, inst)?;
    let mut s = vec![0.0; inst.n_pairs];
    for (d, tour) in tours.iter().enumerate() {
        let mut prev = DS;
        let mut t = 0.0;
        for &n in tour {
            t += inst.flight(d, prev, n + 1) + inst.comm_time_s[d][n];
            s[n] = t;
            prev = n + 1;
        }
    }
    Ok(s)
}

pub fn weighted_objective(service_time_s: &[f64], weights: &[f64]) -> f64 {
    service_time_s.iter().zip(weights).map(|(s, w)| s * w).sum()
}

/// Service times, energies and objective of explicit tours.
pub fn evaluate(tours: Vec<Vec<usize>>, inst: &RoutingInstance) -> Result<Routing, RoutingError> {
    let service_time_s = service_times(&tours, inst)?;
    let energy_j = tours.iter().enumerate().map(|(d, t)| inst.tour_energy(d, t)).collect();
    let objective_s = weighted_objective(&service_time_s, &inst.weights);
    Ok(Routing { tours, service_time_s, energy_j, objective_s })
}

#[derive(Debug, Clone, Copy)]
struct Label {
    cost: f64,
    /// Flight time from this state's first stop to the end of the tour,
    /// return leg included.
    flight: f64,
    next: u8,
    parent: u32,
}

const NO_NEXT: u8 = u8::MAX;

struct DroneTable {
    /// `labels[mask * n + j]`
    labels: Vec<Vec<Label>>,
    /// Best cost serving exactly `mask`, with first stop and label index.
    best: Vec<(f64, usize, usize)>,
}

fn pareto(mut cands: Vec<Label>, scalar: bool) -> Vec<Label> {
    cands.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(a.flight.total_cmp(&b.flight)));
    if scalar {
        cands.truncate(1);
        return cands;
    }
    let mut out: Vec<Label> = Vec::with_capacity(cands.len());
    for c in cands {
        if out.last().is_none_or(|l| c.flight < l.flight) {
            out.push(c);
        }
    }
    out
}

fn drone_table(inst: &RoutingInstance, d: usize) -> DroneTable {
    let n = inst.n_pairs;
    let full = 1usize << n;
    let f = &inst.flight_time_s[d];
    let c = &inst.comm_time_s[d];
    let w = &inst.weights;
    let fp = inst.flight_power_w[d];
    let battery = inst.battery_j[d];

    let mut weight = vec![0.0; full];
    let mut hover = vec![0.0; full];
    for mask in 1..full {
        let low = mask.trailing_zeros() as usize;
        let rest = mask & (mask - 1);
        weight[mask] = weight[rest] + w[low];
        hover[mask] = hover[rest] + inst.stop_power_w[d][low] * c[low];
    }

    // Worst-case flight of any tour over all pairs; if even that fits the
    // battery, a single label per state suffices.
    let worst_fly: f64 = (0..=n)
        .map(|m| (0..=n).filter(|&k| k != m).map(|k| f[m][k]).fold(0.0, f64::max))
        .sum();
    let scalar = fp * worst_fly + hover[full - 1] <= battery;

    let mut labels: Vec<Vec<Label>> = vec![Vec::new(); full * n];
    for mask in 1..full {
        for j in 0..n {
            if mask & (1 << j) == 0 {
                continue;
            }
            let rest = mask & !(1 << j);
            let head = weight[mask] * c[j];
            let mut cands = Vec::new();
            if rest == 0 {
                let flight = f[j + 1][DS];
                if fp * flight + hover[mask] <= battery {
                    cands.push(Label { cost: head, flight, next: NO_NEXT, parent: 0 });
                }
            } else {
                for k in 0..n {
                    if rest & (1 << k) == 0 {
                        continue;
                    }
                    let leg = f[j + 1][k + 1];
                    for (idx, l) in labels[rest * n + k].iter().enumerate() {
                        let flight = leg + l.flight;
                        if fp * flight + hover[mask] > battery {
                            continue;
                        }
                        cands.push(Label {
                            cost: head + weight[rest] * leg + l.cost,
                            flight,
                            next: k as u8,
                            parent: idx as u32,
                        });
                    }
                }
            }
            labels[mask * n + j] = pareto(cands, scalar);
        }
    }

    let mut best = vec![(f64::INFINITY, usize::MAX, usize::MAX); full];
    best[0] = (0.0, usize::MAX, usize::MAX);
    for (mask, slot) in best.iter_mut().enumerate().skip(1) {
        for j in 0..n {
            if mask & (1 << j) == 0 {
                continue;
            }
            let out = f[DS][j + 1];
            for (idx, l) in labels[mask * n + j].iter().enumerate() {
                if fp * (out + l.flight) + hover[mask] > battery {
                    continue;
                }
                let cost = weight[mask] * out + l.cost;
                if cost < slot.0 {
                    *slot = (cost, j, idx);
                }
            }
        }
    }
    DroneTable { labels, best }
}

fn reconstruct(table: &DroneTable, n: usize, mask: usize) -> Vec<usize> {
    if mask == 0 {
        return Vec::new();
    }
    let (_, mut j, mut idx) = table.best[mask];
    let mut rest = mask;
    let mut tour = Vec::with_capacity(mask.count_ones() as usize);
    loop {
        tour.push(j);
        let l = table.labels[rest * n + j][idx];
        rest &= !(1 << j);
        if l.next == NO_NEXT {
            break;
        }
        j = l.next as usize;
        idx = l.parent as usize;
    }
    tour
}

/// Provably optimal routing for fixed stops.
///
/// Among equal-cost partitions the enumeration keeps the first found, which
/// gives the numerically smallest pair set to the highest-index drone.
pub fn solve_exact(inst: &RoutingInstance) -> Result<Routing, RoutingError> {
    let n = inst.n_pairs;
    if n > MAX_EXACT_PAIRS {
        return Err(RoutingError::TooLarge { n, limit: MAX_EXACT_PAIRS });
    }
    if inst.n_drones == 0 {
        return Err(RoutingError::Infeasible);
    }
    let full = (1usize << n) - 1;
    let tables: Vec<DroneTable> = (0..inst.n_drones).map(|d| drone_table(inst, d)).collect();

    let mut acc: Vec<f64> = tables[0].best.iter().map(|b| b.0).collect();
    let mut choice: Vec<Vec<usize>> = Vec::with_capacity(inst.n_drones);
    choice.push((0..=full).collect());
    for table in &tables[1..] {
        let mut next = vec![f64::INFINITY; full + 1];
        let mut pick = vec![0usize; full + 1];
        for mask in 0..=full {
            // Submasks of `mask` in increasing order, starting from the empty set.
            let mut sub = 0usize;
            loop {
                let cost = acc[mask & !sub] + table.best[sub].0;
                if cost < next[mask] {
                    next[mask] = cost;
                    pick[mask] = sub;
                }
                if sub == mask {
                    break;
                }
                sub = (sub.wrapping_sub(mask)) & mask;
            }
        }
        acc = next;
        choice.push(pick);
    }
    if !acc[full].is_finite() {
        return Err(RoutingError::Infeasible);
    }
    let mut tours = vec![Vec::new(); inst.n_drones];
    let mut remaining = full;
    for d in (0..inst.n_drones).rev() {
        let sub = choice[d][remaining];
        tours[d] = reconstruct(&tables[d], n, sub);
        remaining &= !sub;
    }
    debug_assert_eq!(remaining, 0);
    evaluate(tours, inst)
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Exhaustive enumeration of every assignment and every tour order.
/// Ties resolve to the lexicographically smallest tour list.
pub fn brute_force_routing(inst: &RoutingInstance) -> Result<Routing, RoutingError> {
    let n = inst.n_pairs;
    if n > MAX_BRUTE_FORCE_PAIRS {
        return Err(RoutingError::TooLarge { n, limit: MAX_BRUTE_FORCE_PAIRS });
    }
    let nd = inst.n_drones;
    if nd == 0 {
        return Err(RoutingError::Infeasible);
    }
    let mut best: Option<Routing> = None;
    let total = nd.pow(n as u32);
    for code in 0..total {
        let mut groups = vec![Vec::new(); nd];
        let mut c = code;
        for pair in 0..n {
            groups[c % nd].push(pair);
            c /= nd;
        }
        let orders: Vec<Vec<Vec<usize>>> = groups.iter().map(|g| permutations(g)).collect();
        let mut idx = vec![0usize; nd];
        loop {
            let tours: Vec<Vec<usize>> = (0..nd).map(|d| orders[d][idx[d]].clone()).collect();
            let r = evaluate(tours, inst)?;
            let fits = r.energy_j.iter().zip(&inst.battery_j).all(|(e, b)| e <= b);
            if fits {
                let better = match &best {
                    None => true,
                    Some(b) => r.objective_s < b.objective_s || (r.objective_s == b.objective_s && r.tours < b.tours),
                };
                if better {
                    best = Some(r);
                }
            }
            let mut d = 0;
            while d < nd {
                idx[d] += 1;
                if idx[d] < orders[d].len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == nd {
                break;
            }
        }
    }
    best.ok_or(RoutingError::Infeasible)
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Random instance from jittered stop positions, for solver cross-checks; `tight` scales batteries
/// so that some assignments violate the budget.
pub fn random_instance(seed: u64, n: usize, nd: usize, tight: bool) -> RoutingInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = Position3D::new(2500.0, 2500.0, 30.0);
    let mut flight = Vec::new();
    let mut comm = Vec::new();
    let mut stop_w = Vec::new();
    let mut fly_w = Vec::new();
    let mut battery = Vec::new();
    let base: Vec<Position3D> = (0..n)
        .map(|_| Position3D::new(5000.0 * unit(&mut rng), 5000.0 * unit(&mut rng), 200.0 * unit(&mut rng)))
        .collect();
    for _ in 0..nd {
        let speed = 10.0 + 10.0 * unit(&mut rng);
        let mut pts = vec![ds];
        for b in &base {
            pts.push(b.offset(100.0 * unit(&mut rng), 100.0 * unit(&mut rng), 0.0));
        }
        flight.push(pts.iter().map(|a| pts.iter().map(|b| distance(a, b) / speed).collect()).collect::<Vec<Vec<f64>>>());
        comm.push((0..n).map(|_| if unit(&mut rng) < 0.3 { 300.0 + 900.0 * unit(&mut rng) } else { 5.0 * unit(&mut rng) }).collect::<Vec<_>>());
        stop_w.push((0..n).map(|_| 80.0 + 10.0 * unit(&mut rng)).collect::<Vec<_>>());
        fly_w.push(88.0 + 2.0 * unit(&mut rng));
        battery.push(if tight { 80_000.0 + 200_000.0 * unit(&mut rng) } else { 1e12 });
    }
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + unit(&mut rng)).collect();
    let total: f64 = raw.iter().sum();
    RoutingInstance {
        n_pairs: n,
        n_drones: nd,
        flight_time_s: flight,
        comm_time_s: comm,
        weights: raw.iter().map(|w| w / total).collect(),
        flight_power_w: fly_w,
        stop_power_w: stop_w,
        battery_j: battery,
    }
}


/// One broken constraint found by [`audit`].
#[derive(Debug, Clone, PartialEq)]
pub struct AuditViolation {
    pub constraint: &'static str,
    pub detail: String,
}

/// Rebuilds the binary precedence variables from the tours and checks every
/// routing constraint, energy budgets and the reported service times.
#[allow(clippy::needless_range_loop)]
pub fn audit(routing: &Routing, inst: &RoutingInstance) -> Vec<AuditViolation> {
    let mut out = Vec::new();
    let mut bad = |constraint: &'static str, detail: String| out.push(AuditViolation { constraint, detail });
    let n = inst.n_pairs;
    if routing.tours.len() != inst.n_drones {
        bad("tours", format!("{} tours for {} drones", routing.tours.len(), inst.n_drones));
        return out;
    }
    if let Some(&p) = routing.tours.iter().flatten().find(|&&p| p >= n) {
        bad("tours", format!("unknown pair {p}"));
        return out;
    }
    // p[d][m][k] = 1 iff drone d goes directly from node m to node k.
    let mut p = vec![vec![vec![0u32; n + 1]; n + 1]; inst.n_drones];
    for (d, tour) in routing.tours.iter().enumerate() {
        if tour.is_empty() {
            continue;
        }
        let mut prev = DS;
        for &k in tour {
            p[d][prev][k + 1] += 1;
            prev = k + 1;
        }
        p[d][prev][DS] += 1;
    }
    for (d, pd) in p.iter().enumerate() {
        for m in 0..=n {
            let out_deg: u32 = (0..=n).filter(|&k| k != m).map(|k| pd[m][k]).sum();
            let in_deg: u32 = (0..=n).filter(|&k| k != m).map(|k| pd[k][m]).sum();
            if m != DS && in_deg > 1 {
                bad("degree", format!("drone {d} enters stop {} {in_deg} times", m - 1));
            }
            if out_deg > 1 && m != DS {
                bad("degree", format!("drone {d} leaves stop {} {out_deg} times", m - 1));
            }
            if pd[m][m] > 0 {
                bad("degree", format!("drone {d} has a self loop at node {m}"));
            }
            if m != DS && out_deg > in_deg {
                bad("flow", format!("drone {d} leaves stop {} without arriving", m - 1));
            }
            if m != DS {
                for k in 1..=n {
                    if k != m && pd[m][k] + pd[k][m] > 1 {
                        bad("two_cycle", format!("drone {d} shuttles between stops {} and {}", m - 1, k - 1));
                    }
                }
            }
        }
        let leaves: u32 = (1..=n).map(|k| pd[DS][k]).sum();
        let returns: u32 = (1..=n).map(|k| pd[k][DS]).sum();
        let serves: u32 = (1..=n).map(|k| (0..=n).map(|m| pd[m][k]).sum::<u32>()).sum();
        if serves > 0 && (returns != 1 || leaves != 1) {
            bad("depot", format!("drone {d} leaves the DS {leaves} times and returns {returns} times"));
        }
        if serves == 0 && (returns > 0 || leaves > 0) {
            bad("depot", format!("idle drone {d} moves"));
        }
        // Walk successors from the DS; every served stop must be reached.
        let mut reached = vec![false; n + 1];
        let mut at = DS;
        for _ in 0..=n {
            let Some(next) = (1..=n).find(|&k| pd[at][k] > 0) else { break };
            if reached[next] {
                break;
            }
            reached[next] = true;
            at = next;
        }
        for k in 1..=n {
            let served = (0..=n).any(|m| pd[m][k] > 0);
            if served && !reached[k] {
                bad("connectivity", format!("drone {d} stop {} is not connected to the DS", k - 1));
            }
        }
    }
    for k in 1..=n {
        let total: u32 = p.iter().map(|pd| (0..=n).map(|m| pd[m][k]).sum::<u32>()).sum();
        if total != 1 {
            bad("served_once", format!("pair {} served {total} times", k - 1));
        }
    }
    for d in 0..inst.n_drones {
        let e = inst.tour_energy(d, &routing.tours[d]);
        if e > inst.battery_j[d] {
            bad("battery", format!("drone {d} needs {e} J of {} J", inst.battery_j[d]));
        }
        if let Some(reported) = routing.energy_j.get(d) {
            if (reported - e).abs() > 1e-9 * e.max(1.0) {
                bad("energy", format!("drone {d} reports {reported} J, recomputed {e} J"));
            }
        }
    }
    match service_times(&routing.tours, inst) {
        Ok(s) => {
            for (i, (a, b)) in s.iter().zip(&routing.service_time_s).enumerate() {
                if (a - b).abs() > 1e-9 {
                    bad("service_time", format!("pair {i} reports {b} s, recomputed {a} s"));
                }
            }
            let obj = weighted_objective(&s, &inst.weights);
            if (obj - routing.objective_s).abs() > 1e-9 * obj.abs().max(1.0) {
                bad("objective", format!("reported {} s, recomputed {obj} s", routing.objective_s));
            }
        }
        Err(e) => bad("service_time", e.to_string()),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel_gap(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn single_pair_single_drone() {
        let inst = random_instance(1, 1, 1, false);
        let r = solve_exact(&inst).unwrap();
        assert_eq!(r.tours, vec![vec![0]]);
        assert_eq!(r.service_time_s[0], inst.flight(0, DS, 1) + inst.comm_time_s[0][0]);
        assert_eq!(brute_force_routing(&inst).unwrap().objective_s, r.objective_s);
        assert!(audit(&r, &inst).is_empty());
    }

    #[test]
    fn service_time_recursion() {
        let inst = random_instance(2, 3, 2, false);
        assert!(matches!(service_times(&[vec![0, 1], vec![]], &inst), Err(RoutingError::PairUnserved(2))));
        assert!(matches!(service_times(&[vec![0, 1, 1], vec![2]], &inst), Err(RoutingError::PairRepeated(1))));
        let s = service_times(&[vec![2, 0], vec![1]], &inst).unwrap();
        assert_eq!(s[2], inst.flight(0, DS, 3) + inst.comm_time_s[0][2]);
        assert_eq!(s[0], s[2] + inst.flight(0, 3, 1) + inst.comm_time_s[0][0]);
        let empty = RoutingInstance { n_pairs: 0, weights: vec![], ..random_instance(2, 0, 1, false) };
        assert!(service_times(&[vec![]], &empty).unwrap().is_empty());
    }

    #[test]
    fn far_pairs_split_across_drones() {
        // Two pairs on opposite corners, identical drones, equal weights.
        let ds = Position3D::new(2500.0, 2500.0, 30.0);
        let stops = [Position3D::new(100.0, 100.0, 100.0), Position3D::new(4900.0, 4900.0, 100.0)];
        let pts = [ds, stops[0], stops[1]];
        let table: Vec<Vec<f64>> = pts.iter().map(|a| pts.iter().map(|b| distance(a, b) / 15.0).collect()).collect();
        let inst = RoutingInstance {
            n_pairs: 2,
            n_drones: 2,
            flight_time_s: vec![table.clone(), table],
            comm_time_s: vec![vec![1.0, 1.0]; 2],
            weights: vec![0.5, 0.5],
            flight_power_w: vec![88.0; 2],
            stop_power_w: vec![vec![84.0; 2]; 2],
            battery_j: vec![1e9; 2],
        };
        let r = solve_exact(&inst).unwrap();
        assert!(r.tours.iter().all(|t| t.len() == 1), "{:?}", r.tours);
        assert!(rel_gap(r.objective_s, brute_force_routing(&inst).unwrap().objective_s) < 1e-12);
    }

    #[test]
    fn single_drone_order_is_best_permutation() {
        for seed in 0..10 {
            let inst = random_instance(100 + seed, 4, 1, false);
            let exact = solve_exact(&inst).unwrap();
            let best = permutations(&[0, 1, 2, 3])
                .into_iter()
                .map(|t| evaluate(vec![t], &inst).unwrap().objective_s)
                .fold(f64::INFINITY, f64::min);
            assert!(rel_gap(exact.objective_s, best) < 1e-9);
        }
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        for seed in 0..120 {
            let n = 1 + (seed as usize % 4);
            let nd = 1 + (seed as usize / 4) % 2;
            let tight = seed % 3 == 0;
            let inst = random_instance(seed, n, nd, tight);
            let exact = solve_exact(&inst);
            let brute = brute_force_routing(&inst);
            match (exact, brute) {
                (Ok(e), Ok(b)) => {
                    assert!(rel_gap(e.objective_s, b.objective_s) <= 1e-9, "seed {seed}: {} vs {}", e.objective_s, b.objective_s);
                    assert!(audit(&e, &inst).is_empty(), "seed {seed}: {:?}", audit(&e, &inst));
                }
                (Err(RoutingError::Infeasible), Err(RoutingError::Infeasible)) => {}
                (e, b) => panic!("seed {seed}: {e:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn infeasible_when_batteries_too_small() {
        let mut inst = random_instance(9, 3, 2, false);
        inst.battery_j = vec![1.0, 1.0];
        assert_eq!(solve_exact(&inst), Err(RoutingError::Infeasible));
        assert_eq!(brute_force_routing(&inst), Err(RoutingError::Infeasible));
    }

    #[test]
    fn binding_battery_forces_longer_but_feasible_order() {
        // Search for an instance where the unconstrained optimum breaks the
        // budget of a single drone but some other order fits.
        let mut found = false;
        for seed in 0..200 {
            let mut inst = random_instance(500 + seed, 4, 1, false);
            let free = solve_exact(&inst).unwrap();
            let energies: Vec<f64> = permutations(&[0, 1, 2, 3]).iter().map(|t| inst.tour_energy(0, t)).collect();
            let min_e = energies.iter().copied().fold(f64::INFINITY, f64::min);
            if free.energy_j[0] > min_e * 1.001 {
                inst.battery_j = vec![0.5 * (free.energy_j[0] + min_e)];
                let exact = solve_exact(&inst).unwrap();
                let brute = brute_force_routing(&inst).unwrap();
                assert!(exact.energy_j[0] <= inst.battery_j[0]);
                assert!(exact.objective_s > free.objective_s);
                assert!(rel_gap(exact.objective_s, brute.objective_s) <= 1e-9);
                found = true;
                break;
            }
        }
        assert!(found);
    }

    #[test]
    fn weight_scaling_keeps_argmin() {
        for seed in 0..20 {
            let inst = random_instance(300 + seed, 5, 2, seed % 2 == 0);
            let Ok(a) = solve_exact(&inst) else { continue };
            let scaled = RoutingInstance { weights: inst.weights.iter().map(|w| w * 7.0).collect(), ..inst.clone() };
            let b = solve_exact(&scaled).unwrap();
            assert_eq!(a.tours, b.tours);
        }
    }

    #[test]
    fn audit_catches_broken_routings() {
        let inst = random_instance(4, 3, 2, false);
        let good = solve_exact(&inst).unwrap();
        assert!(audit(&good, &inst).is_empty());

        let mut twice = good.clone();
        twice.tours = vec![vec![0, 1, 2], vec![1]];
        let v = audit(&twice, &inst);
        assert!(v.iter().any(|x| x.constraint == "served_once"));

        let mut skipped = good.clone();
        skipped.tours = vec![vec![0, 1], vec![]];
        assert!(audit(&skipped, &inst).iter().any(|x| x.constraint == "served_once"));

        let mut shifted = good.clone();
        shifted.service_time_s[0] += 1.0;
        assert!(audit(&shifted, &inst).iter().any(|x| x.constraint == "service_time"));

        let mut poor = inst.clone();
        poor.battery_j = vec![1.0, 1.0];
        assert!(audit(&good, &poor).iter().any(|x| x.constraint == "battery"));
    }

    #[test]
    fn brute_force_guards_size() {
        let inst = random_instance(1, 8, 1, false);
        assert!(matches!(brute_force_routing(&inst), Err(RoutingError::TooLarge { n: 8, .. })));
    }

    #[test]
    fn dump_round_trip_and_big_m() {
        let inst = random_instance(6, 3, 2, false);
        let back = RoutingInstance::from_dump(&inst.dump()).unwrap();
        assert_eq!(back, inst);
        let r = solve_exact(&inst).unwrap();
        assert!(r.service_time_s.iter().all(|s| *s <= inst.big_m()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn exact_equals_enumeration(seed in any::<u64>(), n in 1usize..6, nd in 1usize..4, tight in any::<bool>()) {
            prop_assume!(nd.pow(n as u32) <= 243);
            let inst = random_instance(seed, n, nd, tight);
            match (solve_exact(&inst), brute_force_routing(&inst)) {
                (Ok(e), Ok(b)) => {
                    prop_assert!(rel_gap(e.objective_s, b.objective_s) <= 1e-9);
                    prop_assert!(audit(&e, &inst).is_empty());
                }
                (Err(RoutingError::Infeasible), Err(RoutingError::Infeasible)) => {}
                (e, b) => prop_assert!(false, "{:?} vs {:?}", e, b),
            }
        }
    }
}

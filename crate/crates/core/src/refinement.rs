//! Per-drone stop refinement with a shrinking 3×3×3 cuboid search.
//!
//! For a fixed tour, every stop is given up to 27 candidate positions on a
//! lattice around it. The configuration minimizing the drone's weighted
//! service time within its energy budget is adopted, the lattice shrinks by
//! `tau`, and the process repeats until nothing improves at sub-`min_step`
//! resolution.

use serde::{Deserialize, Serialize};

use crate::channel::{comm_time, relay_rate, Band};
use crate::geometry::{clamp_to_region, distance, Position3D, Region};
use crate::power::stop_power;
use crate::scenario::Scenario;

/// Moves have to beat the incumbent by more than this many seconds.
pub const IMPROVEMENT_EPS_S: f64 = 1e-9;
/// Tours up to this length are searched combinatorially when allowed.
pub const MAX_COMBINATORIAL_STOPS: usize = 4;
const MAX_LEVELS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CuboidSearchParams {
    pub delta_x_m: f64,
    pub delta_y_m: f64,
    pub delta_z_m: f64,
    pub tau: f64,
    pub min_step_m: f64,
    /// Evaluate every combination of candidates for short tours instead of
    /// sweeping one stop at a time.
    pub full_combinatorial: bool,
}

impl Default for CuboidSearchParams {
    fn default() -> Self {
        Self { delta_x_m: 300.0, delta_y_m: 300.0, delta_z_m: 50.0, tau: 0.6, min_step_m: 1.0, full_combinatorial: true }
    }
}

impl CuboidSearchParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, val) in [
            ("delta_x_m", self.delta_x_m),
            ("delta_y_m", self.delta_y_m),
            ("delta_z_m", self.delta_z_m),
            ("min_step_m", self.min_step_m),
        ] {
            if !(val > 0.0 && val.is_finite()) {
                v.push(format!("search.{name} must be > 0 (got {val})"));
            }
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            v.push(format!("search.tau must lie in (0, 1) (got {})", self.tau));
        }
        v
    }

    fn deltas(&self) -> [f64; 3] {
        [self.delta_x_m, self.delta_y_m, self.delta_z_m]
    }
}

/// Relay time and hover-plus-radio power of one stop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopCost {
    pub comm_time_s: f64,
    pub power_w: f64,
}

/// Cost of relaying a pair from a given position; `None` when the band is
/// unusable there.
pub trait StopEvaluator {
    fn evaluate(&self, pair: usize, pos: &Position3D) -> Option<StopCost>;
}

/// Channel-model evaluator for one drone with the bands and μWave sharing
/// fixed after band selection.
pub struct ChannelEvaluator<'a> {
    pub scenario: &'a Scenario,
    pub drone: usize,
    /// Band of every pair for this drone.
    pub bands: Vec<Band>,
    pub n_uwave: usize,
}

impl StopEvaluator for ChannelEvaluator<'_> {
    fn evaluate(&self, pair: usize, pos: &Position3D) -> Option<StopCost> {
        let s = self.scenario;
        if !s.region.contains(pos) {
            return None;
        }
        let band = self.bands[pair];
        let link = s.relay_link(pair, self.drone);
        let rate = relay_rate(&link, band, pos, self.n_uwave, &s.env, &s.radio).ok()?;
        let t = comm_time(s.pairs[pair].message_bits, rate).ok()?;
        Some(StopCost { comm_time_s: t, power_w: stop_power(&s.drones[self.drone], &s.physics, band) })
    }
}

/// Constant parts of one drone's tour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TourContext<'a> {
    pub docking_station: Position3D,
    pub speed_mps: f64,
    pub flight_power_w: f64,
    pub battery_j: f64,
    pub weights: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TourStop {
    pub pair: usize,
    pub position: Position3D,
    pub cost: StopCost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub stops: Vec<TourStop>,
    pub objective_before_s: f64,
    pub objective_after_s: f64,
    pub energy_j: f64,
    /// Shrink levels at which a better configuration was adopted.
    pub improving_levels: usize,
    pub levels: usize,
}

impl Refined {
    pub fn moved(&self) -> bool {
        self.improving_levels > 0
    }
}

/// The lattice `p + (i·δx, j·δy, k·δz)`, `i, j, k ∈ {−1, 0, 1}`, clamped to
/// the region, with duplicates and infeasible points removed. `p` itself
/// always comes first.
pub fn cuboid_candidates<F>(p: &Position3D, deltas: [f64; 3], region: &Region, feasible: F) -> Vec<Position3D>
where
    F: Fn(&Position3D) -> bool,
{
    let mut out = vec![*p];
    for i in [-1.0, 0.0, 1.0] {
        for j in [-1.0, 0.0, 1.0] {
            for k in [-1.0, 0.0, 1.0] {
                let q = clamp_to_region(&p.offset(i * deltas[0], j * deltas[1], k * deltas[2]), region);
                if !out.contains(&q) && feasible(&q) {
                    out.push(q);
                }
            }
        }
    }
    out
}

/// `(weighted service time, energy)` of a tour through `stops`.
pub fn tour_cost(ctx: &TourContext<'_>, stops: &[TourStop]) -> (f64, f64) {
    let mut prev = ctx.docking_station;
    let mut t = 0.0;
    let mut obj = 0.0;
    let mut fly = 0.0;
    let mut hover = 0.0;
    for s in stops {
        let leg = distance(&prev, &s.position) / ctx.speed_mps;
        fly += leg;
        t += leg + s.cost.comm_time_s;
        obj += ctx.weights[s.pair] * t;
        hover += s.cost.power_w * s.cost.comm_time_s;
        prev = s.position;
    }
    if !stops.is_empty() {
        fly += distance(&prev, &ctx.docking_station) / ctx.speed_mps;
    }
    (obj, ctx.flight_power_w * fly + hover)
}

struct Search<'a, 'b> {
    ctx: &'a TourContext<'b>,
    options: &'a [Vec<TourStop>],
    /// Per stop: minimum comm time over its options, for the lower bound.
    min_comm: Vec<f64>,
    best_obj: f64,
    best: Vec<usize>,
    pick: Vec<usize>,
}

impl Search<'_, '_> {
    fn dfs(&mut self, i: usize, prev: Position3D, t: f64, obj: f64, fly: f64, hover: f64) {
        let n = self.options.len();
        if i == n {
            let back = distance(&prev, &self.ctx.docking_station) / self.ctx.speed_mps;
            let energy = self.ctx.flight_power_w * (fly + back) + hover;
            if energy <= self.ctx.battery_j && obj < self.best_obj - IMPROVEMENT_EPS_S {
                self.best_obj = obj;
                self.best.clone_from(&self.pick);
            }
            return;
        }
        // Remaining stops are reached no earlier than `t` plus their own
        // shortest relay times.
        let mut bound = obj;
        let mut tt = t;
        for j in i..n {
            tt += self.min_comm[j];
            bound += self.ctx.weights[self.options[j][0].pair] * tt;
        }
        if bound >= self.best_obj - IMPROVEMENT_EPS_S {
            return;
        }
        for c in 0..self.options[i].len() {
            let s = self.options[i][c];
            let leg = distance(&prev, &s.position) / self.ctx.speed_mps;
            let hov = hover + s.cost.power_w * s.cost.comm_time_s;
            if self.ctx.flight_power_w * (fly + leg) + hov > self.ctx.battery_j {
                continue;
            }
            let tn = t + leg + s.cost.comm_time_s;
            self.pick[i] = c;
            self.dfs(i + 1, s.position, tn, obj + self.ctx.weights[s.pair] * tn, fly + leg, hov);
        }
    }
}

fn options_for<E: StopEvaluator>(
    stop: &TourStop,
    deltas: [f64; 3],
    region: &Region,
    eval: &E,
) -> Vec<TourStop> {
    let mut out = vec![*stop];
    for q in cuboid_candidates(&stop.position, deltas, region, |_| true).into_iter().skip(1) {
        if let Some(cost) = eval.evaluate(stop.pair, &q) {
            out.push(TourStop { pair: stop.pair, position: q, cost });
        }
    }
    out
}

/// Best configuration over all candidate combinations; `None` when nothing
/// beats `incumbent`.
fn combinatorial_step<E: StopEvaluator>(
    ctx: &TourContext<'_>,
    stops: &[TourStop],
    incumbent: f64,
    deltas: [f64; 3],
    region: &Region,
    eval: &E,
) -> Option<Vec<TourStop>> {
    let options: Vec<Vec<TourStop>> = stops.iter().map(|s| options_for(s, deltas, region, eval)).collect();
    let min_comm = options.iter().map(|o| o.iter().map(|s| s.cost.comm_time_s).fold(f64::INFINITY, f64::min)).collect();
    let mut search = Search {
        ctx,
        options: &options,
        min_comm,
        best_obj: incumbent,
        best: vec![0; stops.len()],
        pick: vec![0; stops.len()],
    };
    search.dfs(0, ctx.docking_station, 0.0, 0.0, 0.0, 0.0);
    if search.best_obj < incumbent {
        Some(search.best.iter().enumerate().map(|(i, &c)| options[i][c]).collect())
    } else {
        None
    }
}

/// One cyclic pass moving each stop to its best candidate with the others
/// held fixed.
fn sweep_step<E: StopEvaluator>(
    ctx: &TourContext<'_>,
    stops: &[TourStop],
    incumbent: f64,
    deltas: [f64; 3],
    region: &Region,
    eval: &E,
) -> Option<Vec<TourStop>> {
    let mut cur = stops.to_vec();
    let mut cur_obj = incumbent;
    let mut moved = false;
    for i in 0..cur.len() {
        let options = options_for(&cur[i], deltas, region, eval);
        let mut best: Option<(f64, TourStop)> = None;
        for opt in options.into_iter().skip(1) {
            let mut trial = cur.clone();
            trial[i] = opt;
            let (obj, energy) = tour_cost(ctx, &trial);
            let target = best.map_or(cur_obj, |b| b.0);
            if energy <= ctx.battery_j && obj < target - IMPROVEMENT_EPS_S {
                best = Some((obj, opt));
            }
        }
        if let Some((obj, opt)) = best {
            cur[i] = opt;
            cur_obj = obj;
            moved = true;
        }
    }
    moved.then_some(cur)
}

/// Refines the stop positions of one tour. The returned objective is never
/// above the input's; an input that breaks the energy budget is returned
/// unchanged.
pub fn refine_tour<E: StopEvaluator>(
    ctx: &TourContext<'_>,
    stops: &[TourStop],
    region: &Region,
    params: &CuboidSearchParams,
    eval: &E,
) -> Refined {
    let (start_obj, start_energy) = tour_cost(ctx, stops);
    let mut cur = stops.to_vec();
    let mut obj = start_obj;
    let mut energy = start_energy;
    let mut deltas = params.deltas();
    let mut improving = 0;
    let mut levels = 0;
    let combinatorial = params.full_combinatorial && stops.len() <= MAX_COMBINATORIAL_STOPS;
    if !stops.is_empty() && start_energy <= ctx.battery_j {
        while levels < MAX_LEVELS {
            levels += 1;
            let step = if combinatorial {
                combinatorial_step(ctx, &cur, obj, deltas, region, eval)
            } else {
                sweep_step(ctx, &cur, obj, deltas, region, eval)
            };
            let improved = match step {
                Some(next) => {
                    let (o, e) = tour_cost(ctx, &next);
                    debug_assert!(o < obj && e <= ctx.battery_j);
                    cur = next;
                    obj = o;
                    energy = e;
                    improving += 1;
                    true
                }
                None => false,
            };
            let coarsest = deltas.iter().copied().fold(0.0, f64::max);
            if !improved && coarsest < params.min_step_m {
                break;
            }
            for d in &mut deltas {
                *d *= params.tau;
            }
        }
    }
    Refined {
        stops: cur,
        objective_before_s: start_obj,
        objective_after_s: obj,
        energy_j: energy,
        improving_levels: improving,
        levels,
    }
}

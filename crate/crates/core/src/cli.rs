//! `relayplan` command line: plan, sweep, oracle and generate.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::geometry::distance;
use crate::planner::{plan, summarize, Metrics, Mode, Plan, PlanError, PlannerConfig, WeightsMode};
use crate::routing::{audit, brute_force_routing, random_instance, solve_exact, RoutingError, MAX_BRUTE_FORCE_PAIRS};
use crate::scenario::{generate, load_with_warnings, GenerateOverrides, Scenario, SCHEMA_VERSION};

pub const TRAJECTORY_HEADER: &str = "drone,order,x,y,z,arrive_s,depart_s,pair,band,label";
pub const ORACLE_TOLERANCE: f64 = 1e-9;

pub const EXIT_OK: i32 = 0;
pub const EXIT_GAP: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "relayplan", version, about = "Plan relay-drone tours over μWave and mmWave links")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan one scenario and write plan.json, trajectory.csv and metrics.json.
    Plan(PlanArgs),
    /// Plan a fixed scenario for 1..=N drones in both modes.
    Sweep(SweepArgs),
    /// Compare the exact router with exhaustive enumeration.
    Oracle(OracleArgs),
    /// Write a generated scenario as JSON.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightsFlag {
    Uniform,
    Bymsg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeFlag {
    Milp,
    Full,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "generate")]
    pub scenario: Option<PathBuf>,
    /// Generate the scenario from --seed, --pairs and --drones (the default
    /// without --scenario).
    #[arg(long)]
    pub generate: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub pairs: usize,
    #[arg(long, default_value_t = 2)]
    pub drones: usize,
    /// Pair weights; defaults to the scenario's own, uniform when it has none.
    #[arg(long, value_enum)]
    pub weights: Option<WeightsFlag>,
}

#[derive(Debug, Clone, Args)]
pub struct TuningArgs {
    #[arg(long, value_enum, default_value = "full")]
    pub mode: ModeFlag,
    /// Convergence threshold in seconds; accepts `inf`.
    #[arg(long, default_value_t = 0.1)]
    pub upsilon: f64,
    #[arg(long, default_value_t = 20)]
    pub max_iters: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Re-run the scenario and config embedded in a metrics.json.
    #[arg(long, conflicts_with_all = ["scenario", "generate"])]
    pub from_report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0.1)]
    pub upsilon: f64,
    #[arg(long, default_value_t = 20)]
    pub max_iters: usize,
    /// Largest drone count; the scenario must define at least this many.
    #[arg(long, default_value_t = 6)]
    pub max_drones: usize,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 4)]
    pub max_pairs: usize,
    #[arg(long, default_value_t = 2)]
    pub max_drones: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub pairs: usize,
    #[arg(long, default_value_t = 2)]
    pub drones: usize,
    #[arg(long, value_enum)]
    pub weights: Option<WeightsFlag>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error("bad report: {0}")]
    Report(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Scenario(_) => "scenario",
            CliError::Plan(PlanError::Routing(RoutingError::Infeasible)) => "infeasible",
            CliError::Plan(_) => "plan",
            CliError::Routing(_) => "routing",
            CliError::Report(_) => "report",
            CliError::Usage(_) => "usage",
        }
    }

    pub fn to_json(&self) -> Value {
        json!({ "schema_version": SCHEMA_VERSION, "error": self.kind(), "message": self.to_string() })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Writes through a temporary sibling so readers never see partial files.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSetup {
    /// Generator seed, absent for scenario files.
    pub seed: Option<u64>,
    pub scenario: Scenario,
    pub config: PlannerConfig,
}

impl RunSetup {
    /// SHA-256 of the scenario and config JSON.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.scenario.to_json().as_bytes());
        h.update(b"\n");
        h.update(serde_json::to_string(&self.config).expect("config serializes").as_bytes());
        hex::encode(h.finalize())
    }
}

fn weights_mode(flag: Option<WeightsFlag>) -> WeightsMode {
    match flag {
        None => WeightsMode::Explicit,
        Some(WeightsFlag::Uniform) => WeightsMode::Uniform,
        Some(WeightsFlag::Bymsg) => WeightsMode::MessageProportional,
    }
}

fn load_scenario(a: &ScenarioArgs) -> Result<(Option<u64>, Scenario), CliError> {
    match &a.scenario {
        Some(path) => {
            let (s, warnings) = load_with_warnings(&read(path)?)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            Ok((None, s))
        }
        None => {
            let o = GenerateOverrides {
                weights_by_message: a.weights == Some(WeightsFlag::Bymsg),
                ..GenerateOverrides::default()
            };
            Ok((Some(a.seed), generate(a.seed, a.pairs, a.drones, &o)?))
        }
    }
}

fn planner_config(mode: ModeFlag, weights: Option<WeightsFlag>, upsilon: f64, max_iters: usize) -> PlannerConfig {
    PlannerConfig {
        mode: match mode {
            ModeFlag::Milp => Mode::Milp,
            ModeFlag::Full => Mode::Full,
        },
        weights: weights_mode(weights),
        convergence_upsilon_s: upsilon,
        max_iterations: max_iters,
        ..PlannerConfig::default()
    }
}

fn provenance(setup: &RunSetup) -> Value {
    json!({ "schema_version": SCHEMA_VERSION, "seed": setup.seed, "config_digest": setup.digest() })
}

#[derive(Debug, Clone, Serialize)]
struct StopRecord {
    order: usize,
    pair: usize,
    band: crate::channel::Band,
    position_m: [f64; 3],
    altitude_m: f64,
    rate_bps: f64,
    comm_time_s: f64,
    arrive_s: f64,
    depart_s: f64,
}

/// Per-drone stops with arrival and departure times along the tour.
fn timeline(scenario: &Scenario, plan: &Plan, drone: usize) -> (Vec<StopRecord>, f64) {
    let speed = scenario.drones[drone].speed_mps;
    let mut prev = scenario.docking_station_m;
    let mut t = 0.0;
    let mut out = Vec::new();
    for (i, s) in plan.tour_stops(drone).into_iter().enumerate() {
        let arrive = t + distance(&prev, &s.position) / speed;
        // Departure is the recorded service time so the trajectory replays
        // the plan exactly.
        let depart = plan.routing.service_time_s[s.pair];
        out.push(StopRecord {
            order: i + 1,
            pair: s.pair,
            band: s.band,
            position_m: s.position.as_array(),
            altitude_m: s.position.z,
            rate_bps: s.rate_bps,
            comm_time_s: s.comm_time_s,
            arrive_s: arrive,
            depart_s: depart,
        });
        t = depart;
        prev = s.position;
    }
    let back = if out.is_empty() { 0.0 } else { t + distance(&prev, &scenario.docking_station_m) / speed };
    (out, back)
}

pub fn plan_json(setup: &RunSetup, plan: &Plan) -> String {
    let metrics = summarize(&setup.scenario, plan);
    let drones: Vec<Value> = (0..setup.scenario.n_drones())
        .map(|d| {
            let (stops, back) = timeline(&setup.scenario, plan, d);
            json!({
                "drone": d,
                "tour": plan.routing.tours[d],
                "energy_j": plan.routing.energy_j[d],
                "tour_length_m": metrics.tour_length_m[d],
                "return_s": back,
                "stops": stops,
            })
        })
        .collect();
    let mut doc = provenance(setup);
    let o = doc.as_object_mut().expect("object");
    o.insert("weighted_objective_s".into(), json!(plan.routing.objective_s));
    o.insert("service_time_s".into(), json!(plan.routing.service_time_s));
    o.insert("weights".into(), json!(plan.weights));
    o.insert("n_uwave".into(), json!(plan.n_uwave));
    o.insert("iterations".into(), json!(plan.iterations()));
    o.insert("converged".into(), json!(plan.converged));
    o.insert("drones".into(), Value::Array(drones));
    serde_json::to_string_pretty(&doc).expect("plan serializes") + "\n"
}

/// One row per waypoint: DS departure, each stop, DS return. Stop labels
/// read `pair(altitude)`.
pub fn trajectory_csv(setup: &RunSetup, plan: &Plan) -> String {
    let mut out = String::new();
    let seed = setup.seed.map_or("none".to_string(), |s| s.to_string());
    let _ = writeln!(out, "# relayplan trajectory schema_version={SCHEMA_VERSION} seed={seed} config_digest={}", setup.digest());
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    let ds = setup.scenario.docking_station_m;
    for d in 0..setup.scenario.n_drones() {
        let (stops, back) = timeline(&setup.scenario, plan, d);
        let _ = writeln!(out, "{d},0,{},{},{},0,0,,,DS", ds.x, ds.y, ds.z);
        if stops.is_empty() {
            continue;
        }
        for s in &stops {
            let [x, y, z] = s.position_m;
            let _ = writeln!(
                out,
                "{d},{},{x},{y},{z},{},{},{},{},{}({:.0})",
                s.order, s.arrive_s, s.depart_s, s.pair, s.band, s.pair, z
            );
        }
        let _ = writeln!(out, "{d},{},{},{},{},{back},{back},,,DS", stops.len() + 1, ds.x, ds.y, ds.z);
    }
    out
}

pub fn metrics_json(setup: &RunSetup, plan: &Plan, elapsed_ms: f64) -> String {
    let mut doc = provenance(setup);
    let o = doc.as_object_mut().expect("object");
    o.insert("metrics".into(), json!(summarize(&setup.scenario, plan)));
    o.insert("history".into(), json!(plan.history));
    o.insert("timings_ms".into(), json!({ "total": elapsed_ms }));
    o.insert("setup".into(), json!(setup));
    serde_json::to_string_pretty(&doc).expect("metrics serialize") + "\n"
}

fn setup_from_report(path: &Path) -> Result<RunSetup, CliError> {
    let doc: Value = serde_json::from_str(&read(path)?).map_err(|e| CliError::Report(e.to_string()))?;
    let setup = doc.get("setup").cloned().ok_or_else(|| CliError::Report("missing \"setup\"".into()))?;
    serde_json::from_value(setup).map_err(|e| CliError::Report(e.to_string()))
}

fn write_error(out_dir: &Path, e: &CliError) {
    let text = serde_json::to_string_pretty(&e.to_json()).expect("error serializes");
    eprintln!("{text}");
    if std::fs::create_dir_all(out_dir).is_ok() {
        let _ = write_atomic(&out_dir.join("error.json"), &(text + "\n"));
    }
}

pub fn cmd_plan(a: &PlanArgs) -> Result<(), CliError> {
    let setup = match &a.from_report {
        Some(path) => setup_from_report(path)?,
        None => {
            let (seed, scenario) = load_scenario(&a.scenario)?;
            let t = &a.tuning;
            let config = planner_config(t.mode, a.scenario.weights, t.upsilon, t.max_iters);
            RunSetup { seed, scenario, config }
        }
    };
    let start = Instant::now();
    let p = plan(&setup.scenario, &setup.config)?;
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    std::fs::create_dir_all(&a.out_dir).map_err(io_err(&a.out_dir))?;
    write_atomic(&a.out_dir.join("plan.json"), &plan_json(&setup, &p))?;
    write_atomic(&a.out_dir.join("trajectory.csv"), &trajectory_csv(&setup, &p))?;
    write_atomic(&a.out_dir.join("metrics.json"), &metrics_json(&setup, &p, elapsed_ms))?;
    log::info!("objective {:.3} s after {} passes", p.routing.objective_s, p.iterations());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub drones: usize,
    pub mode: Mode,
    pub feasible: bool,
    pub weighted_objective_s: Option<f64>,
    pub total_service_time_s: Option<f64>,
    pub latest_service_time_s: Option<f64>,
    pub error: Option<String>,
}

fn sweep_row(drones: usize, mode: Mode, result: Result<Metrics, PlanError>) -> SweepRow {
    match result {
        Ok(m) => SweepRow {
            drones,
            mode,
            feasible: true,
            weighted_objective_s: Some(m.weighted_objective_s),
            total_service_time_s: Some(m.total_service_time_s),
            latest_service_time_s: Some(m.latest_service_time_s),
            error: None,
        },
        Err(e) => SweepRow {
            drones,
            mode,
            feasible: false,
            weighted_objective_s: None,
            total_service_time_s: None,
            latest_service_time_s: None,
            error: Some(e.to_string()),
        },
    }
}

pub fn sweep_rows(scenario: &Scenario, base: &PlannerConfig, max_drones: usize) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for d in 1..=max_drones {
        let s = scenario.with_drone_count(d);
        for mode in [Mode::Milp, Mode::Full] {
            let cfg = PlannerConfig { mode, ..base.clone() };
            let r = plan(&s, &cfg).map(|p| summarize(&s, &p));
            if let Err(e) = &r {
                log::warn!("D={d} {mode:?}: {e}");
            }
            rows.push(sweep_row(d, mode, r));
        }
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<(), CliError> {
    let (seed, scenario) = load_scenario(&ScenarioArgs { drones: a.scenario.drones.max(a.max_drones), ..a.scenario.clone() })?;
    if scenario.n_drones() < a.max_drones {
        return Err(CliError::Usage(format!(
            "scenario defines {} drones, sweep needs {}",
            scenario.n_drones(),
            a.max_drones
        )));
    }
    let config = planner_config(ModeFlag::Full, a.scenario.weights, a.upsilon, a.max_iters);
    let setup = RunSetup { seed, scenario, config };
    let rows = sweep_rows(&setup.scenario, &setup.config, a.max_drones);
    let mut csv = String::new();
    let seed_txt = seed.map_or("none".to_string(), |s| s.to_string());
    let _ = writeln!(csv, "# relayplan sweep schema_version={SCHEMA_VERSION} seed={seed_txt} config_digest={}", setup.digest());
    csv.push_str("drones,mode,feasible,weighted_objective_s,total_service_time_s,latest_service_time_s\n");
    for r in &rows {
        let mode = if r.mode == Mode::Milp { "milp" } else { "full" };
        let _ = writeln!(
            csv,
            "{},{mode},{},{},{},{}",
            r.drones,
            r.feasible,
            opt(r.weighted_objective_s),
            opt(r.total_service_time_s),
            opt(r.latest_service_time_s)
        );
    }
    let mut doc = provenance(&setup);
    doc.as_object_mut().expect("object").insert("rows".into(), json!(rows));
    std::fs::create_dir_all(&a.out_dir).map_err(io_err(&a.out_dir))?;
    write_atomic(&a.out_dir.join("sweep.csv"), &csv)?;
    write_atomic(&a.out_dir.join("sweep.json"), &(serde_json::to_string_pretty(&doc).expect("rows serialize") + "\n"))?;
    print!("{csv}");
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub instances: usize,
    pub infeasible: usize,
    pub max_gap: f64,
    pub audit_failures: usize,
}

pub fn run_oracle(a: &OracleArgs) -> Result<OracleReport, CliError> {
    if a.max_pairs > MAX_BRUTE_FORCE_PAIRS {
        return Err(RoutingError::TooLarge { n: a.max_pairs, limit: MAX_BRUTE_FORCE_PAIRS }.into());
    }
    if a.max_pairs == 0 || a.max_drones == 0 {
        return Err(CliError::Usage("need at least one pair and one drone".into()));
    }
    let mut report = OracleReport { instances: a.instances, infeasible: 0, max_gap: 0.0, audit_failures: 0 };
    for i in 0..a.instances {
        let seed = a.seed.wrapping_add(i as u64);
        let n = 1 + i % a.max_pairs;
        let nd = 1 + (i / a.max_pairs) % a.max_drones;
        let inst = random_instance(seed, n, nd, i % 3 == 0);
        match (solve_exact(&inst), brute_force_routing(&inst)) {
            (Ok(e), Ok(b)) => {
                let gap = (e.objective_s - b.objective_s).abs() / b.objective_s.abs().max(1e-12);
                report.max_gap = report.max_gap.max(gap);
                if !audit(&e, &inst).is_empty() {
                    report.audit_failures += 1;
                }
            }
            (Err(RoutingError::Infeasible), Err(RoutingError::Infeasible)) => report.infeasible += 1,
            // One side feasible and the other not is an unbounded gap.
            _ => report.max_gap = f64::INFINITY,
        }
    }
    Ok(report)
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<(), CliError> {
    let o = GenerateOverrides { weights_by_message: a.weights == Some(WeightsFlag::Bymsg), ..GenerateOverrides::default() };
    let text = generate(a.seed, a.pairs, a.drones, &o)?.to_json() + "\n";
    match &a.out {
        Some(path) => write_atomic(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match &cli.command {
        Command::Plan(a) => match cmd_plan(a) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                write_error(&a.out_dir, &e);
                EXIT_ERROR
            }
        },
        Command::Sweep(a) => match cmd_sweep(a) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                write_error(&a.out_dir, &e);
                EXIT_ERROR
            }
        },
        Command::Oracle(a) => match run_oracle(a) {
            Ok(r) => {
                println!(
                    "instances={} infeasible={} audit_failures={} max_relative_gap={:e}",
                    r.instances, r.infeasible, r.audit_failures, r.max_gap
                );
                if r.max_gap > ORACLE_TOLERANCE || r.audit_failures > 0 {
                    EXIT_GAP
                } else {
                    EXIT_OK
                }
            }
            Err(e) => {
                eprintln!("{}", e.to_json());
                EXIT_ERROR
            }
        },
        Command::Generate(a) => match cmd_generate(a) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("{}", e.to_json());
                EXIT_ERROR
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_small_instances_have_no_gap() {
        let r = run_oracle(&OracleArgs { instances: 40, max_pairs: 4, max_drones: 2, seed: 3 }).unwrap();
        assert_eq!(r.max_gap, 0.0);
        assert_eq!(r.audit_failures, 0);
        let one = run_oracle(&OracleArgs { instances: 5, max_pairs: 1, max_drones: 1, seed: 1 }).unwrap();
        assert_eq!(one.max_gap, 0.0);
    }

    #[test]
    fn oracle_guards_size() {
        let e = run_oracle(&OracleArgs { instances: 1, max_pairs: 9, max_drones: 1, seed: 1 }).unwrap_err();
        assert!(matches!(e, CliError::Routing(RoutingError::TooLarge { .. })));
    }

    #[test]
    fn upsilon_accepts_inf() {
        let cli = Cli::try_parse_from(["relayplan", "plan", "--upsilon", "inf", "--mode", "milp"]).unwrap();
        let Command::Plan(a) = cli.command else { panic!() };
        assert!(a.tuning.upsilon.is_infinite());
        assert_eq!(a.tuning.mode, ModeFlag::Milp);
    }

    #[test]
    fn digest_tracks_config() {
        let s = generate(1, 2, 1, &GenerateOverrides::default()).unwrap();
        let a = RunSetup { seed: Some(1), scenario: s.clone(), config: PlannerConfig::default() };
        let b = RunSetup { config: PlannerConfig { max_iterations: 3, ..PlannerConfig::default() }, ..a.clone() };
        assert_eq!(a.digest(), a.clone().digest());
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}

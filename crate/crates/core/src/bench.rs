//! Evaluation protocol: tasks × parameter cases × methods over a fixed seed
//! list, RMSE metrics with failure accounting, and CSV/markdown tables.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{apply_case, PlantState, WipParams};
use crate::error::{Error, Result};
use crate::fusion::{hybrid_action, Ensemble};
use crate::lqr::LqrGains;
use crate::tasks::{AugmentedState, EnvConfig, TorqueCommand, TrajectoryProfile, WipEnv};

const CASES_FIXTURE: &str = include_str!("../fixtures/cases.toml");

/// A plant perturbation: body mass, gear and friction multipliers, CoM shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkCase {
    pub name: String,
    pub mass: f64,
    pub gear: f64,
    pub friction: f64,
    pub com: f64,
}

impl BenchmarkCase {
    pub fn new(name: &str, mass: f64, gear: f64, friction: f64, com: f64) -> Self {
        Self { name: name.into(), mass, gear, friction, com }
    }

    /// `(mass, gear, friction, com)` in shortest round-trip notation.
    pub fn tuple_string(&self) -> String {
        format!("({}, {}, {}, {})", self.mass, self.gear, self.friction, self.com)
    }
}

#[derive(Deserialize)]
struct CaseFile {
    case: Vec<BenchmarkCase>,
}

/// The three bundled cases; the first is the training plant.
pub fn default_cases() -> Vec<BenchmarkCase> {
    toml::from_str::<CaseFile>(CASES_FIXTURE).expect("bundled case fixture parses").case
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchTask {
    Balance,
    Velocity,
    Position,
}

impl BenchTask {
    pub const ALL: [BenchTask; 3] = [BenchTask::Balance, BenchTask::Velocity, BenchTask::Position];

    pub fn label(self) -> &'static str {
        match self {
            BenchTask::Balance => "task1_balance",
            BenchTask::Velocity => "task2_velocity",
            BenchTask::Position => "task3_position",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.label() == s || format!("{t:?}").eq_ignore_ascii_case(s))
    }
}

/// Reference shapes for the three tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    /// Task 2 cruise velocity, m/s.
    pub velocity_amplitude: f64,
    /// Task 2 ramp-up duration, s.
    pub velocity_ramp: f64,
    /// Task 3 travel distance, m.
    pub position_amplitude: f64,
    pub position_duration: f64,
    /// Half-width of the uniform initial pitch perturbation, rad.
    pub init_pitch: f64,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            velocity_amplitude: 0.5,
            velocity_ramp: 4.0,
            position_amplitude: 1.0,
            position_duration: 4.0,
            init_pitch: 0.05,
        }
    }
}

impl TaskParams {
    pub fn profile(&self, task: BenchTask) -> TrajectoryProfile {
        match task {
            BenchTask::Balance => TrajectoryProfile::balance(),
            BenchTask::Velocity => TrajectoryProfile::quintic_velocity(self.velocity_amplitude, self.velocity_ramp),
            BenchTask::Position => TrajectoryProfile::quintic_position(self.position_amplitude, self.position_duration),
        }
    }

    /// Per-seed initial state: at rest with a small pitch offset.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> PlantState {
        let theta = if self.init_pitch > 0.0 { rng.random_range(-self.init_pitch..=self.init_pitch) } else { 0.0 };
        PlantState::new(0.0, theta, 0.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rmse_pos: f64,
    pub rmse_vel: f64,
    pub rmse_pitch: f64,
    pub completed_fraction: f64,
    pub failed: bool,
}

pub fn rmse(actual: &[f64], desired: &[f64]) -> Result<f64> {
    if actual.len() != desired.len() || actual.is_empty() {
        return Err(Error::Shape(format!("rmse over {} vs {} samples", actual.len(), desired.len())));
    }
    let s: f64 = actual.iter().zip(desired).map(|(a, d)| (a - d).powi(2)).sum();
    Ok((s / actual.len() as f64).sqrt())
}

/// A feedback law that can be rolled out by the harness.
pub trait Controller: Send + Sync {
    fn name(&self) -> &str;
    fn command(
        &self,
        obs: &AugmentedState,
        q: &PlantState,
        q_des: &PlantState,
        rng: &mut ChaCha8Rng,
    ) -> Result<TorqueCommand>;
}

pub struct LqrController(pub LqrGains);

impl Controller for LqrController {
    fn name(&self) -> &str {
        "lqr"
    }

    fn command(&self, _: &AugmentedState, q: &PlantState, q_des: &PlantState, _: &mut ChaCha8Rng) -> Result<TorqueCommand> {
        Ok(TorqueCommand::lqr_only(self.0.torque(q, q_des)))
    }
}

pub struct ZeroController;

impl Controller for ZeroController {
    fn name(&self) -> &str {
        "zero"
    }

    fn command(&self, _: &AugmentedState, _: &PlantState, _: &PlantState, _: &mut ChaCha8Rng) -> Result<TorqueCommand> {
        Ok(TorqueCommand::default())
    }
}

pub struct HybridController {
    pub ensemble: Arc<Ensemble>,
    pub gains: LqrGains,
    pub residual_scale: f64,
    /// Execute the composite mean instead of sampling it.
    pub deterministic: bool,
}

impl Controller for HybridController {
    fn name(&self) -> &str {
        "hybrid"
    }

    fn command(&self, obs: &AugmentedState, q: &PlantState, q_des: &PlantState, rng: &mut ChaCha8Rng) -> Result<TorqueCommand> {
        let f = hybrid_action(&self.ensemble, &self.gains, obs, q, q_des, self.residual_scale, self.deterministic, rng)?;
        Ok(f.command())
    }
}

/// One rollout to the horizon or first failure. RMSEs cover the samples
/// before failure only.
pub fn run_episode(
    controller: &dyn Controller,
    params: &WipParams,
    profile: &TrajectoryProfile,
    env_cfg: &EnvConfig,
    initial: PlantState,
    rng: &mut ChaCha8Rng,
) -> Result<RunMetrics> {
    let mut env = WipEnv::new(*params, profile.clone(), *env_cfg)?;
    let mut obs = env.reset(initial)?;
    let mut q_des = env.reference();
    let (mut sp, mut sv, mut st, mut n) = (0.0, 0.0, 0.0, 0usize);
    while !env.is_done() {
        let cmd = controller.command(&obs, &env.state(), &q_des, rng)?;
        let out = env.step(cmd)?;
        if !out.failed {
            sp += (out.q.x_w - out.q_des.x_w).powi(2);
            sv += (out.q.x_w_dot - out.q_des.x_w_dot).powi(2);
            st += (out.q.theta - out.q_des.theta).powi(2);
            n += 1;
        }
        obs = out.obs;
        q_des = out.q_des;
    }
    let n = n.max(1) as f64;
    Ok(RunMetrics {
        rmse_pos: (sp / n).sqrt(),
        rmse_vel: (sv / n).sqrt(),
        rmse_pitch: (st / n).sqrt(),
        completed_fraction: env.completed_fraction(),
        failed: env.failed(),
    })
}

/// Per-seed and averaged metrics for one (controller, task, case) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub task: BenchTask,
    pub case: String,
    pub method: String,
    pub per_seed: Vec<RunMetrics>,
    pub mean: RunMetrics,
}

pub fn average(runs: &[RunMetrics]) -> RunMetrics {
    let n = runs.len().max(1) as f64;
    RunMetrics {
        rmse_pos: runs.iter().map(|r| r.rmse_pos).sum::<f64>() / n,
        rmse_vel: runs.iter().map(|r| r.rmse_vel).sum::<f64>() / n,
        rmse_pitch: runs.iter().map(|r| r.rmse_pitch).sum::<f64>() / n,
        completed_fraction: runs.iter().map(|r| r.completed_fraction).sum::<f64>() / n,
        failed: runs.iter().any(|r| r.failed),
    }
}

/// Roll out `controller` once per seed on the perturbed plant. Seeds are
/// independent and run in parallel on the current rayon pool.
#[allow(clippy::too_many_arguments)]
pub fn run_case(
    controller: &dyn Controller,
    task: BenchTask,
    case: &BenchmarkCase,
    base: &WipParams,
    tasks: &TaskParams,
    env_cfg: &EnvConfig,
    seeds: &[u64],
) -> Result<CaseResult> {
    use rayon::prelude::*;
    if seeds.is_empty() {
        return Err(Error::Param("benchmark needs at least one seed".into()));
    }
    let params = apply_case(base, case)?;
    let profile = tasks.profile(task);
    let per_seed = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = tasks.initial_state(&mut rng);
            run_episode(controller, &params, &profile, env_cfg, init, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CaseResult {
        task,
        case: case.name.clone(),
        method: controller.name().to_string(),
        mean: average(&per_seed),
        per_seed,
    })
}

pub const METRICS: [&str; 3] = ["position_m", "velocity_m_s", "pitch_rad"];

fn metric_value(m: &RunMetrics, i: usize) -> f64 {
    [m.rmse_pos, m.rmse_vel, m.rmse_pitch][i]
}

fn cell(m: &RunMetrics, i: usize, digits: Option<usize>) -> String {
    let v = metric_value(m, i);
    let mut s = match digits {
        Some(d) => format!("{v:.d$}"),
        None => format!("{v}"),
    };
    if m.failed {
        match digits {
            Some(d) => write!(s, " ({:.d$})", m.completed_fraction).unwrap(),
            None => write!(s, " ({})", m.completed_fraction).unwrap(),
        }
    }
    s
}

/// Provenance recorded at the top of every emitted table.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Vec<u64>,
}

fn ordered<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}

/// Render averaged results as `(csv, markdown)`: one row per (task, case,
/// metric), one column per method. Failed cells carry the completed
/// fraction in parentheses.
pub fn emit_table(results: &[CaseResult], prov: &Provenance) -> Result<(String, String)> {
    if results.is_empty() {
        return Err(Error::Usage("no results to tabulate".into()));
    }
    let methods = ordered(results.iter().map(|r| r.method.clone()));
    let rows = ordered(results.iter().map(|r| (r.task, r.case.clone())));
    let seeds = prov.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
    let lookup = |task: BenchTask, case: &str, method: &str| {
        results.iter().find(|r| r.task == task && r.case == case && r.method == method)
    };

    let mut csv = format!("# config_hash={}\n# seeds={}\ntask,case,metric,{}\n", prov.config_hash, seeds, methods.join(","));
    let mut md = format!(
        "<!-- config_hash={} seeds={} -->\n\n| Task | Case | Metric (RMSE) | {} |\n|---|---|---|{}\n",
        prov.config_hash,
        seeds,
        methods.join(" | "),
        "---|".repeat(methods.len())
    );
    for (task, case) in &rows {
        for (i, metric) in METRICS.iter().enumerate() {
            let cells = |digits| {
                methods
                    .iter()
                    .map(|m| lookup(*task, case, m).map_or_else(|| "-".to_string(), |r| cell(&r.mean, i, digits)))
                    .collect::<Vec<_>>()
            };
            writeln!(csv, "{},\"{}\",{},{}", task.label(), case, metric, cells(None).join(",")).unwrap();
            writeln!(md, "| {} | {} | {} | {} |", task.label(), case, metric, cells(Some(3)).join(" | ")).unwrap();
        }
    }
    Ok((csv, md))
}

/// One parsed CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TableCell {
    pub task: BenchTask,
    pub case: String,
    pub metric: String,
    pub method: String,
    pub value: f64,
    pub completed_fraction: Option<f64>,
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    for c in line.chars() {
        match c {
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

/// Parse a CSV produced by [`emit_table`], skipping comment lines.
pub fn parse_table(csv: &str) -> Result<Vec<TableCell>> {
    let mut lines = csv.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Data { line: 1, msg: "missing header".into() })?;
    let head = split_csv_line(header);
    if head.len() < 4 || head[..3] != ["task", "case", "metric"] {
        return Err(Error::Data { line: 1, msg: "unexpected header".into() });
    }
    let methods = &head[3..];
    let mut out = Vec::new();
    for (ln, line) in lines {
        let f = split_csv_line(line);
        let bad = |msg: &str| Error::Data { line: ln + 1, msg: msg.into() };
        if f.len() != head.len() {
            return Err(bad("wrong field count"));
        }
        let task = BenchTask::from_label(&f[0]).ok_or_else(|| bad("unknown task"))?;
        for (j, method) in methods.iter().enumerate() {
            let raw = f[3 + j].trim();
            if raw == "-" {
                continue;
            }
            let (v, frac) = match raw.split_once(" (") {
                Some((v, rest)) => (v, Some(rest.trim_end_matches(')'))),
                None => (raw, None),
            };
            let value = v.parse::<f64>().map_err(|_| bad("bad value"))?;
            let completed_fraction = frac.map(|s| s.parse::<f64>().map_err(|_| bad("bad fraction"))).transpose()?;
            out.push(TableCell {
                task,
                case: f[1].clone(),
                metric: f[2].clone(),
                method: method.clone(),
                value,
                completed_fraction,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_matches_case_tuples() {
        let cases = default_cases();
        let tuples: Vec<String> = cases.iter().map(BenchmarkCase::tuple_string).collect();
        assert_eq!(tuples, ["(4.05, 1, 1, 0)", "(8.05, 1.3, 1.3, 0.12)", "(14.05, 0.9, 1.1, -0.12)"]);
        assert_eq!(cases[0].name, "Case 1 (Normal)");
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let d = [0.3, -1.0, 2.0];
        let a: Vec<f64> = d.iter().map(|x| x + 0.1).collect();
        assert!((rmse(&a, &d).unwrap() - 0.1).abs() < 1e-15);
        assert!((rmse(&[0.0, 1.0], &[0.0, 0.0]).unwrap() - 0.707_106_781_186_547_6).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    fn env_cfg() -> EnvConfig {
        EnvConfig::default()
    }

    #[test]
    fn lqr_balances_nominal_case() {
        let r = run_case(
            &LqrController(LqrGains::default()),
            BenchTask::Balance,
            &default_cases()[0],
            &WipParams::default(),
            &TaskParams::default(),
            &env_cfg(),
            &[1, 2, 3, 4, 5],
        )
        .unwrap();
        assert!(!r.mean.failed);
        assert_eq!(r.mean.completed_fraction, 1.0);
        assert!(r.mean.rmse_pitch < 0.05, "{}", r.mean.rmse_pitch);
    }

    #[test]
    fn zero_torque_falls_within_two_seconds() {
        let tasks = TaskParams::default();
        let r = run_case(&ZeroController, BenchTask::Balance, &default_cases()[0], &WipParams::default(), &tasks, &env_cfg(), &[7])
            .unwrap();
        let m = r.per_seed[0];
        assert!(m.failed);
        assert!(m.completed_fraction * env_cfg().horizon as f64 * env_cfg().dt < 2.0);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let go = || {
            run_case(
                &LqrController(LqrGains::default()),
                BenchTask::Velocity,
                &default_cases()[1],
                &WipParams::default(),
                &TaskParams::default(),
                &env_cfg(),
                &[3, 4],
            )
            .unwrap()
        };
        assert_eq!(go(), go());
    }

    fn fake(task: BenchTask, case: &str, method: &str, failed: bool) -> CaseResult {
        let m = RunMetrics {
            rmse_pos: 0.1 + 1.0 / 3.0,
            rmse_vel: 0.2,
            rmse_pitch: 1e-3,
            completed_fraction: if failed { 0.12 } else { 1.0 },
            failed,
        };
        CaseResult { task, case: case.into(), method: method.into(), per_seed: vec![m], mean: m }
    }

    #[test]
    fn one_result_gives_three_metric_rows() {
        let prov = Provenance { config_hash: "abc".into(), seeds: vec![1, 2] };
        let (csv, md) = emit_table(&[fake(BenchTask::Velocity, "Case 2", "lqr", false)], &prov).unwrap();
        let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data.len(), 4);
        assert!(csv.starts_with("# config_hash=abc\n# seeds=1 2\n"));
        assert_eq!(md.lines().filter(|l| l.starts_with("| task")).count(), 3);
    }

    #[test]
    fn failed_cells_carry_fraction_and_round_trip() {
        let results = [
            fake(BenchTask::Velocity, "Case 2", "lqr", false),
            fake(BenchTask::Velocity, "Case 2", "hybrid", true),
            fake(BenchTask::Position, "Case 1 (Normal)", "lqr", true),
        ];
        let prov = Provenance { config_hash: "h".into(), seeds: vec![9] };
        let (csv, md) = emit_table(&results, &prov).unwrap();
        assert!(md.contains("0.433 (0.120)"));
        let cells = parse_table(&csv).unwrap();
        assert_eq!(cells.len(), 9);
        for c in &cells {
            let src = results.iter().find(|r| r.task == c.task && r.case == c.case && r.method == c.method).unwrap();
            let i = METRICS.iter().position(|m| *m == c.metric).unwrap();
            assert_eq!(c.value, metric_value(&src.mean, i));
            assert_eq!(c.completed_fraction, src.mean.failed.then_some(src.mean.completed_fraction));
        }
    }
}

//! Reference trajectories, the augmented observation, the tracking reward and
//! the episodic environment around the plant.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{step_rk4, PlantState, WipParams, DEFAULT_DT};
use crate::error::{Error, Result};

pub const OBS_DIM: usize = 15;

/// `x(τ) = x0 + (xf − x0)(10τ³ − 15τ⁴ + 6τ⁵)` and its time derivative.
/// `t` is clamped to `[0, T]`.
pub fn quintic(t: f64, duration: f64, x0: f64, xf: f64) -> Result<(f64, f64)> {
    if !(duration > 0.0) {
        return Err(Error::Param(format!("quintic duration must be positive, got {duration}")));
    }
    let tau = (t / duration).clamp(0.0, 1.0);
    let (t2, t3) = (tau * tau, tau * tau * tau);
    let s = t3 * (10.0 - 15.0 * tau + 6.0 * t2);
    let ds = 30.0 * t2 * (1.0 - 2.0 * tau + t2) / duration;
    Ok((x0 + (xf - x0) * s, (xf - x0) * ds))
}

/// `∫₀ᵗ` of the unit quintic velocity profile, continued linearly after `T`.
fn quintic_integral(t: f64, duration: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= duration {
        return 0.5 * duration + (t - duration);
    }
    let tau = t / duration;
    let t4 = tau.powi(4);
    duration * t4 * (2.5 - 3.0 * tau + tau * tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Task 1: hold the origin.
    Balance,
    /// Task 2: quintic velocity ramp to `amplitude`, then held.
    QuinticVelocity,
    /// Task 3: quintic position move to `amplitude`, zero desired velocity.
    QuinticPosition,
    TraceReplay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub x_des: f64,
    pub xdot_des: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryProfile {
    pub kind: TaskKind,
    pub duration: f64,
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TracePoint>>,
}

impl TrajectoryProfile {
    pub fn balance() -> Self {
        Self { kind: TaskKind::Balance, duration: 1.0, amplitude: 0.0, trace: None }
    }

    pub fn quintic_velocity(amplitude: f64, duration: f64) -> Self {
        Self { kind: TaskKind::QuinticVelocity, duration, amplitude, trace: None }
    }

    pub fn quintic_position(amplitude: f64, duration: f64) -> Self {
        Self { kind: TaskKind::QuinticPosition, duration, amplitude, trace: None }
    }

    pub fn from_trace(points: Vec<TracePoint>) -> Result<Self> {
        validate_trace(&points)?;
        let duration = points.last().unwrap().t - points[0].t;
        Ok(Self { kind: TaskKind::TraceReplay, duration, amplitude: 0.0, trace: Some(points) })
    }

    /// Desired plant state at time `t`. Desired pitch and pitch rate are zero.
    pub fn reference(&self, t: f64) -> Result<PlantState> {
        build_reference(self, t)
    }
}

fn validate_trace(points: &[TracePoint]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Data { line: 0, msg: "trace is empty".into() });
    }
    for (i, w) in points.windows(2).enumerate() {
        if !(w[1].t > w[0].t) {
            return Err(Error::Data { line: i + 3, msg: "time must be strictly increasing".into() });
        }
    }
    Ok(())
}

pub fn build_reference(profile: &TrajectoryProfile, t: f64) -> Result<PlantState> {
    let (x, xd) = match profile.kind {
        TaskKind::Balance => (0.0, 0.0),
        TaskKind::QuinticVelocity => {
            let v = quintic(t, profile.duration, 0.0, profile.amplitude)?.0;
            (profile.amplitude * quintic_integral(t, profile.duration), v)
        }
        TaskKind::QuinticPosition => (quintic(t, profile.duration, 0.0, profile.amplitude)?.0, 0.0),
        TaskKind::TraceReplay => {
            let pts = profile
                .trace
                .as_deref()
                .ok_or_else(|| Error::Data { line: 0, msg: "trace profile has no samples".into() })?;
            interpolate(pts, t)?
        }
    };
    Ok(PlantState::new(x, 0.0, xd, 0.0))
}

fn interpolate(pts: &[TracePoint], t: f64) -> Result<(f64, f64)> {
    let first = pts.first().ok_or_else(|| Error::Data { line: 0, msg: "trace is empty".into() })?;
    let last = pts.last().unwrap();
    if t <= first.t {
        return Ok((first.x_des, first.xdot_des));
    }
    if t >= last.t {
        return Ok((last.x_des, last.xdot_des));
    }
    let hi = pts.partition_point(|p| p.t <= t);
    let (a, b) = (&pts[hi - 1], &pts[hi]);
    let w = (t - a.t) / (b.t - a.t);
    Ok((a.x_des + w * (b.x_des - a.x_des), a.xdot_des + w * (b.xdot_des - a.xdot_des)))
}

/// Parse a `t,x_des,xdot_des` CSV trace.
pub fn parse_trace(text: &str) -> Result<TrajectoryProfile> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Data { line: 1, msg: "empty trace file".into() })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["t", "x_des", "xdot_des"] {
        return Err(Error::Data { line: 1, msg: format!("expected header t,x_des,xdot_des, got {header:?}") });
    }
    let mut points = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Data { line: line_no, msg: format!("expected 3 columns, got {}", fields.len()) });
        }
        let mut vals = [0.0; 3];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Data { line: line_no, msg: format!("bad number {f:?}") })?;
        }
        if let Some(prev) = points.last().map(|p: &TracePoint| p.t) {
            if !(vals[0] > prev) {
                return Err(Error::Data { line: line_no, msg: "time must be strictly increasing".into() });
            }
        }
        points.push(TracePoint { t: vals[0], x_des: vals[1], xdot_des: vals[2] });
    }
    if points.is_empty() {
        return Err(Error::Data { line: 2, msg: "trace has no samples".into() });
    }
    TrajectoryProfile::from_trace(points)
}

pub fn load_trace(path: &Path) -> Result<TrajectoryProfile> {
    parse_trace(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weights on (position error, pitch error) inside the L2 norm.
    pub k: [f64; 2],
    pub pos_gate: f64,
    pub pitch_gate: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { k: [0.1, 0.1], pos_gate: 1.0, pitch_gate: 0.35 }
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Weighted-norm penalty, a gate bonus while both errors are inside the
/// gates, and an improvement bonus when both errors shrank since the
/// previous step.
pub fn reward(err_x: f64, err_theta: f64, prev_err_x: f64, prev_err_theta: f64, cfg: &RewardConfig) -> f64 {
    let penalty = (cfg.k[0] * err_x).hypot(cfg.k[1] * err_theta);
    let gate = indicator(err_x.abs() < cfg.pos_gate) * indicator(err_theta.abs() < cfg.pitch_gate);
    let improve =
        indicator(err_x.abs() < prev_err_x.abs()) * indicator(err_theta.abs() < prev_err_theta.abs());
    -penalty + gate + improve
}

/// The 15-dim observation: plant state, previous torques (LQR, residual,
/// executed), commanded position and pitch, then the last three position
/// errors and velocities (oldest first).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentedState {
    pub q: PlantState,
    pub tau_prev: [f64; 3],
    pub command: [f64; 2],
    pub hist_err: [f64; 3],
    pub hist_vel: [f64; 3],
}

impl AugmentedState {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        let q = self.q.to_array();
        let mut out = [0.0; OBS_DIM];
        out[..4].copy_from_slice(&q);
        out[4..7].copy_from_slice(&self.tau_prev);
        out[7..9].copy_from_slice(&self.command);
        out[9..12].copy_from_slice(&self.hist_err);
        out[12..15].copy_from_slice(&self.hist_vel);
        out
    }

    pub fn from_array(a: &[f64; OBS_DIM]) -> Self {
        let mut s = Self { q: PlantState::new(a[0], a[1], a[2], a[3]), ..Default::default() };
        s.tau_prev.copy_from_slice(&a[4..7]);
        s.command.copy_from_slice(&a[7..9]);
        s.hist_err.copy_from_slice(&a[9..12]);
        s.hist_vel.copy_from_slice(&a[12..15]);
        s
    }
}

/// Input ablations. Disabled fields are zeroed, the dimension stays 15.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    pub history_inputs: bool,
    pub torque_inputs: bool,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self { history_inputs: true, torque_inputs: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub dt: f64,
    pub horizon: usize,
    pub max_pitch: f64,
    pub max_pos_err: f64,
    pub reward: RewardConfig,
    pub observation: ObservationConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            horizon: 4000,
            max_pitch: 1.0,
            max_pos_err: 3.0,
            reward: RewardConfig::default(),
            observation: ObservationConfig::default(),
        }
    }
}

/// Torques applied in one control period.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TorqueCommand {
    pub lqr: f64,
    pub residual: f64,
    pub total: f64,
}

impl TorqueCommand {
    pub fn lqr_only(lqr: f64) -> Self {
        Self { lqr, residual: 0.0, total: lqr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub obs: AugmentedState,
    pub reward: f64,
    /// Episode over (failure or horizon).
    pub done: bool,
    /// Terminated by a failure condition rather than the horizon.
    pub failed: bool,
    pub q: PlantState,
    pub q_des: PlantState,
}

pub struct WipEnv {
    params: WipParams,
    profile: TrajectoryProfile,
    cfg: EnvConfig,
    q: PlantState,
    step_idx: usize,
    tau_prev: [f64; 3],
    hist_err: [f64; 3],
    hist_vel: [f64; 3],
    prev_err: (f64, f64),
    done: bool,
    failed: bool,
}

impl WipEnv {
    pub fn new(params: WipParams, profile: TrajectoryProfile, cfg: EnvConfig) -> Result<Self> {
        params.validate()?;
        if !(cfg.dt > 0.0) || cfg.horizon == 0 {
            return Err(Error::Param("env dt and horizon must be positive".into()));
        }
        build_reference(&profile, 0.0)?;
        let mut env = Self {
            params,
            profile,
            cfg,
            q: PlantState::ZERO,
            step_idx: 0,
            tau_prev: [0.0; 3],
            hist_err: [0.0; 3],
            hist_vel: [0.0; 3],
            prev_err: (0.0, 0.0),
            done: false,
            failed: false,
        };
        env.reset(PlantState::ZERO)?;
        Ok(env)
    }

    pub fn params(&self) -> &WipParams {
        &self.params
    }

    pub fn profile(&self) -> &TrajectoryProfile {
        &self.profile
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn time(&self) -> f64 {
        self.step_idx as f64 * self.cfg.dt
    }

    pub fn state(&self) -> PlantState {
        self.q
    }

    pub fn reference(&self) -> PlantState {
        build_reference(&self.profile, self.time()).expect("profile validated at construction")
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn completed_fraction(&self) -> f64 {
        (self.step_idx as f64 / self.cfg.horizon as f64).min(1.0)
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    pub fn reset(&mut self, initial: PlantState) -> Result<AugmentedState> {
        if !initial.is_finite() {
            return Err(Error::NonFinite("initial state".into()));
        }
        self.q = initial;
        self.step_idx = 0;
        self.tau_prev = [0.0; 3];
        self.hist_err = [0.0; 3];
        self.hist_vel = [0.0; 3];
        let r = self.reference();
        self.prev_err = (r.x_w - initial.x_w, -initial.theta);
        self.done = false;
        self.failed = false;
        Ok(self.observe(&r))
    }

    pub fn observe(&self, q_des: &PlantState) -> AugmentedState {
        let obs = self.cfg.observation;
        AugmentedState {
            q: self.q,
            tau_prev: if obs.torque_inputs { self.tau_prev } else { [0.0; 3] },
            command: [q_des.x_w, q_des.theta],
            hist_err: if obs.history_inputs { self.hist_err } else { [0.0; 3] },
            hist_vel: if obs.history_inputs { self.hist_vel } else { [0.0; 3] },
        }
    }

    /// Advance one control period under `cmd.total`.
    pub fn step(&mut self, cmd: TorqueCommand) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode; reset first".into()));
        }
        let next = step_rk4(&self.params, &self.q, cmd.total, self.cfg.dt);
        self.step_idx += 1;
        let q_des = self.reference();
        let diverged = match next {
            Ok(q) => {
                self.q = q;
                false
            }
            Err(Error::Divergence { .. }) => true,
            Err(e) => return Err(e),
        };
        self.tau_prev = [cmd.lqr, cmd.residual, cmd.total];
        if diverged {
            self.done = true;
            self.failed = true;
            return Ok(StepOutcome {
                obs: self.observe(&q_des),
                reward: 0.0,
                done: true,
                failed: true,
                q: self.q,
                q_des,
            });
        }
        let err_x = q_des.x_w - self.q.x_w;
        let err_theta = q_des.theta - self.q.theta;
        let r = reward(err_x, err_theta, self.prev_err.0, self.prev_err.1, &self.cfg.reward);
        self.prev_err = (err_x, err_theta);
        self.hist_err = [self.hist_err[1], self.hist_err[2], err_x];
        self.hist_vel = [self.hist_vel[1], self.hist_vel[2], self.q.x_w_dot];

        let failed = self.q.theta.abs() > self.cfg.max_pitch || err_x.abs() > self.cfg.max_pos_err;
        self.failed = failed;
        self.done = failed || self.step_idx >= self.cfg.horizon;
        Ok(StepOutcome { obs: self.observe(&q_des), reward: r, done: self.done, failed, q: self.q, q_des })
    }
}

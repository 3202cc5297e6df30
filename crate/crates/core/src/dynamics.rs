//! Planar wheeled-inverted-pendulum plant.
//!
//! The body is a lumped pendulum of mass `m0` and inertia `I0` whose centre
//! of mass sits `L` above the wheel axle. Pitch is measured from the upright
//! and is positive when the body leans toward `+x`. With that convention the
//! equations of motion are
//!
//! ```text
//! (m0 + mw + Iw/r²)·ẍ + m0·L·cosθ·θ̈ − m0·L·sinθ·θ̇² = u_eff
//! m0·L·cosθ·ẍ + (m0·L² + I0)·θ̈ − m0·g·L·sinθ = 0
//! ```
//!
//! where `u_eff = gear_ratio·u − friction_coeff·c_visc·ẋ`, saturated at
//! `±torque_limit`.

use serde::{Deserialize, Serialize};

use crate::bench::BenchmarkCase;
use crate::error::{Error, Result};

/// Base viscous coefficient scaled by `friction_coeff` (N·m·s/m).
pub const C_VISC: f64 = 0.1;

/// Default physics and control period (s).
pub const DEFAULT_DT: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WipParams {
    /// Body mass (kg).
    pub m0: f64,
    /// Wheel mass (kg).
    pub mw: f64,
    /// Body inertia about the CoM (kg·m²).
    pub i0: f64,
    /// Wheel inertia (kg·m²).
    pub iw: f64,
    /// Wheel centre to body CoM (m).
    pub l: f64,
    /// Wheel radius (m).
    pub r: f64,
    pub g: f64,
    pub gear_ratio: f64,
    pub friction_coeff: f64,
    /// Additive shift applied to `l` (m).
    pub com_offset: f64,
    /// Saturation on the effective input.
    pub torque_limit: f64,
}

impl Default for WipParams {
    /// SATYRR reduced-order model.
    fn default() -> Self {
        Self {
            m0: 6.8,
            mw: 0.4297,
            i0: 0.16,
            iw: 0.00278,
            l: 0.28,
            r: 0.06,
            g: 9.81,
            gear_ratio: 1.0,
            friction_coeff: 1.0,
            com_offset: 0.0,
            torque_limit: 20.0,
        }
    }
}

impl WipParams {
    pub fn l_eff(&self) -> f64 {
        self.l + self.com_offset
    }

    /// Translational inertia seen by the wheel input.
    pub fn m_total(&self) -> f64 {
        self.m0 + self.mw + self.iw / (self.r * self.r)
    }

    /// Body inertia about the wheel axle.
    pub fn j_body(&self) -> f64 {
        let l = self.l_eff();
        self.m0 * l * l + self.i0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m0", self.m0),
            ("mw", self.mw),
            ("i0", self.i0),
            ("iw", self.iw),
            ("r", self.r),
            ("gear_ratio", self.gear_ratio),
            ("torque_limit", self.torque_limit),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::Param(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.g.is_finite() {
            return Err(Error::Param("g must be finite".into()));
        }
        if !(self.friction_coeff >= 0.0) {
            return Err(Error::Param(format!(
                "friction_coeff must be non-negative, got {}",
                self.friction_coeff
            )));
        }
        if !(self.l_eff() > 0.0) {
            return Err(Error::Param(format!(
                "effective length l + com_offset must be positive, got {}",
                self.l_eff()
            )));
        }
        Ok(())
    }

    /// Input after gear scaling, viscous wheel friction and saturation.
    pub fn effective_input(&self, u: f64, x_w_dot: f64) -> f64 {
        let raw = self.gear_ratio * u - self.friction_coeff * C_VISC * x_w_dot;
        raw.clamp(-self.torque_limit, self.torque_limit)
    }

    /// Total mechanical energy (wheel + body kinetic, body potential).
    pub fn energy(&self, s: &PlantState) -> f64 {
        let l = self.l_eff();
        let cos = s.theta.cos();
        0.5 * self.m_total() * s.x_w_dot * s.x_w_dot
            + self.m0 * l * cos * s.x_w_dot * s.theta_dot
            + 0.5 * self.j_body() * s.theta_dot * s.theta_dot
            + self.m0 * self.g * l * cos
    }
}

/// Perturb the plant per a benchmark case: mass replaced, multipliers set,
/// CoM shifted.
pub fn apply_case(params: &WipParams, case: &BenchmarkCase) -> Result<WipParams> {
    let out = WipParams {
        m0: case.mass,
        gear_ratio: case.gear,
        friction_coeff: case.friction,
        com_offset: case.com,
        ..*params
    };
    out.validate()?;
    Ok(out)
}

/// Plant state `q = [x_w, θ, ẋ_w, θ̇]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub x_w: f64,
    pub theta: f64,
    pub x_w_dot: f64,
    pub theta_dot: f64,
}

impl PlantState {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(x_w: f64, theta: f64, x_w_dot: f64, theta_dot: f64) -> Self {
        Self { x_w, theta, x_w_dot, theta_dot }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_w, self.theta, self.x_w_dot, self.theta_dot]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    fn axpy(self, h: f64, d: [f64; 4]) -> Self {
        Self::new(
            self.x_w + h * d[0],
            self.theta + h * d[1],
            self.x_w_dot + h * d[2],
            self.theta_dot + h * d[3],
        )
    }
}

impl std::ops::Sub for PlantState {
    type Output = PlantState;

    fn sub(self, rhs: Self) -> Self {
        Self::new(
            self.x_w - rhs.x_w,
            self.theta - rhs.theta,
            self.x_w_dot - rhs.x_w_dot,
            self.theta_dot - rhs.theta_dot,
        )
    }
}

/// Solve the 2×2 mass-matrix system for `(ẍ_w, θ̈)`.
pub fn accelerations(params: &WipParams, state: &PlantState, u: f64) -> Result<(f64, f64)> {
    let l = params.l_eff();
    let (sin, cos) = state.theta.sin_cos();
    let m11 = params.m_total();
    let m12 = params.m0 * l * cos;
    let m22 = params.j_body();
    let det = m11 * m22 - m12 * m12;
    if !(det.abs() > 1e-12 * m11 * m22) {
        return Err(Error::Param(format!("singular mass matrix (det = {det:e})")));
    }
    let f1 = params.effective_input(u, state.x_w_dot)
        + params.m0 * l * sin * state.theta_dot * state.theta_dot;
    let f2 = params.m0 * params.g * l * sin;
    let x_ddot = (m22 * f1 - m12 * f2) / det;
    let theta_ddot = (m11 * f2 - m12 * f1) / det;
    Ok((x_ddot, theta_ddot))
}

fn derivative(params: &WipParams, s: &PlantState, u: f64, dt: f64) -> Result<[f64; 4]> {
    if !s.is_finite() {
        return Err(Error::Divergence { time: dt });
    }
    let (xdd, tdd) = accelerations(params, s, u)?;
    Ok([s.x_w_dot, s.theta_dot, xdd, tdd])
}

/// One classical RK4 step with the input held constant over `dt`.
///
/// On blow-up the returned [`Error::Divergence`] carries `dt`, the time into
/// this step; callers that track absolute time should offset it.
pub fn step_rk4(params: &WipParams, state: &PlantState, u: f64, dt: f64) -> Result<PlantState> {
    if !(dt > 0.0) {
        return Err(Error::Param(format!("dt must be positive, got {dt}")));
    }
    let k1 = derivative(params, state, u, dt)?;
    let k2 = derivative(params, &state.axpy(0.5 * dt, k1), u, dt)?;
    let k3 = derivative(params, &state.axpy(0.5 * dt, k2), u, dt)?;
    let k4 = derivative(params, &state.axpy(dt, k3), u, dt)?;
    let mut d = [0.0; 4];
    for i in 0..4 {
        d[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
    }
    let next = state.axpy(dt, d);
    if !next.is_finite() {
        return Err(Error::Divergence { time: dt });
    }
    Ok(next)
}

/// Integrate `steps` RK4 steps under a state-feedback law `control(t, q)`.
/// Returns the trajectory including the initial state.
pub fn simulate<F>(
    params: &WipParams,
    initial: PlantState,
    dt: f64,
    steps: usize,
    mut control: F,
) -> Result<Vec<PlantState>>
where
    F: FnMut(f64, &PlantState) -> f64,
{
    let mut out = Vec::with_capacity(steps + 1);
    let mut s = initial;
    out.push(s);
    for k in 0..steps {
        let t = k as f64 * dt;
        let u = control(t, &s);
        s = step_rk4(params, &s, u, dt).map_err(|e| match e {
            Error::Divergence { time } => Error::Divergence { time: t + time },
            other => other,
        })?;
        out.push(s);
    }
    Ok(out)
}

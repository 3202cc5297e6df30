//! Hybrid controller core: mixture moments over the ensemble, precision
//! weighting against the LQR distribution, and the training loop that acts
//! through the fused policy.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::PlantState;
use crate::error::{Error, Result};
use crate::lqr::{lqr_action, LqrGains};
use crate::nn::GaussianAction;
use crate::sac::{ReplayBuffer, SacAgent, SacConfig, Transition, UpdateStats, UpdateStatus};
use crate::tasks::{AugmentedState, TorqueCommand, WipEnv};

/// Keeps stored squashed actions strictly inside (−1, 1).
const ACTION_EPS: f64 = 1e-9;

/// Mean and variance of a uniformly weighted Gaussian mixture.
pub fn mixture_moments(actions: &[GaussianAction]) -> Result<(f64, f64)> {
    if actions.is_empty() {
        return Err(Error::Usage("mixture of zero components".into()));
    }
    if actions.iter().any(|g| !(g.variance > 0.0) || !g.mean.is_finite()) {
        return Err(Error::Degenerate("mixture component with non-positive variance".into()));
    }
    let n = actions.len() as f64;
    let mu = actions.iter().map(|g| g.mean).sum::<f64>() / n;
    // Within plus between spread; algebraically mean(σ² + μ²) − μ̄² but
    // free of cancellation.
    let var = actions.iter().map(|g| g.variance + (g.mean - mu).powi(2)).sum::<f64>() / n;
    Ok((mu, var))
}

/// Precision-weighted product of `N(mu_pi, s2_pi)` and `N(mu_h, s2_h)`.
pub fn composite(mu_pi: f64, s2_pi: f64, mu_h: f64, s2_h: f64) -> Result<(f64, f64)> {
    let ok = |v: f64| v >= 0.0 && v.is_finite();
    if !ok(s2_pi) || !ok(s2_h) || !mu_pi.is_finite() || !mu_h.is_finite() {
        return Err(Error::Degenerate(format!("composite of N({mu_pi}, {s2_pi}) and N({mu_h}, {s2_h})")));
    }
    let total = s2_pi + s2_h;
    if total == 0.0 {
        return Err(Error::Degenerate("both variances are zero".into()));
    }
    Ok(((mu_pi * s2_h + mu_h * s2_pi) / total, s2_h * s2_pi / total))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedAction {
    pub mu_pi: f64,
    pub sigma2_pi: f64,
    pub mu_phi: f64,
    pub sigma2_phi: f64,
    /// Pre-squash draw from the composite (its mean when deterministic).
    pub z: f64,
    /// `tanh(z)`, the action stored for learning.
    pub a: f64,
    pub tau_lqr: f64,
    pub tau_res: f64,
    pub tau_c: f64,
}

impl FusedAction {
    pub fn command(&self) -> TorqueCommand {
        TorqueCommand { lqr: self.tau_lqr, residual: self.tau_res, total: self.tau_c }
    }
}

/// M agents acting together and sharing one replay buffer.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub members: Vec<SacAgent>,
    pub buffer: ReplayBuffer,
    steps_since_update: usize,
}

impl Ensemble {
    pub fn new<R: Rng + ?Sized>(
        m: usize,
        obs_dim: usize,
        cfg: &SacConfig,
        buffer_capacity: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::Param("ensemble needs at least one member".into()));
        }
        let members = (0..m).map(|_| SacAgent::new(obs_dim, cfg.clone(), rng)).collect::<Result<Vec<_>>>()?;
        Ok(Self { members, buffer: ReplayBuffer::new(obs_dim, buffer_capacity), steps_since_update: 0 })
    }

    pub fn from_members(members: Vec<SacAgent>, buffer_capacity: usize) -> Result<Self> {
        let first = members.first().ok_or_else(|| Error::Param("ensemble needs at least one member".into()))?;
        let d = first.obs_dim();
        if members.iter().any(|m| m.obs_dim() != d) {
            return Err(Error::Shape("ensemble members disagree on input size".into()));
        }
        Ok(Self { members, buffer: ReplayBuffer::new(d, buffer_capacity), steps_since_update: 0 })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.members[0].obs_dim()
    }

    pub fn policies(&self, obs: &[f64]) -> Result<Vec<GaussianAction>> {
        self.members.iter().map(|m| m.policy(obs)).collect()
    }
}

/// One control decision of the hybrid controller. The LQR torque is executed
/// as its mean; its variance only sets the fusion weights.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_action<R: Rng + ?Sized>(
    ensemble: &Ensemble,
    gains: &LqrGains,
    obs: &AugmentedState,
    q: &PlantState,
    q_des: &PlantState,
    residual_scale: f64,
    deterministic: bool,
    rng: &mut R,
) -> Result<FusedAction> {
    let policies = ensemble.policies(&obs.to_array())?;
    let (mu_pi, sigma2_pi) = mixture_moments(&policies)?;
    let h = lqr_action(gains, q, q_des);
    let (mu_phi, sigma2_phi) = composite(mu_pi, sigma2_pi, h.mean, h.variance)?;
    let z = if deterministic {
        mu_phi
    } else {
        let eps: f64 = rng.sample(StandardNormal);
        mu_phi + sigma2_phi.sqrt() * eps
    };
    let a = z.tanh().clamp(-1.0 + ACTION_EPS, 1.0 - ACTION_EPS);
    let tau_res = residual_scale * a;
    Ok(FusedAction { mu_pi, sigma2_pi, mu_phi, sigma2_phi, z, a, tau_lqr: h.mean, tau_res, tau_c: h.mean + tau_res })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub ensemble_size: usize,
    /// Residual torque bound, N·m.
    pub residual_scale: f64,
    /// Environment steps between SAC update events.
    pub update_every: usize,
    pub buffer_capacity: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { ensemble_size: 10, residual_scale: 1.0, update_every: 1000, buffer_capacity: crate::sac::DEFAULT_CAPACITY }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Config { field: format!("fusion.{field}"), msg: msg.into() });
        if self.ensemble_size == 0 {
            return bad("ensemble_size", "must be at least 1");
        }
        if !(self.residual_scale > 0.0) || !self.residual_scale.is_finite() {
            return bad("residual_scale", "must be positive");
        }
        if self.update_every == 0 {
            return bad("update_every", "must be positive");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity", "must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub member: usize,
    pub steps: usize,
    pub total_reward: f64,
    pub mean_reward: f64,
    pub rmse_pos: f64,
    pub failed: bool,
    pub updates: usize,
    /// Statistics of the last update event in this epoch, if any.
    pub last_update: Option<UpdateStats>,
}

/// Run one episode on an already reset `env`, acting through the fused
/// policy. One member, chosen at random, receives every update of the epoch.
pub fn train_epoch<R: Rng + ?Sized>(
    ensemble: &mut Ensemble,
    env: &mut WipEnv,
    gains: &LqrGains,
    cfg: &FusionConfig,
    rng: &mut R,
) -> Result<EpochStats> {
    if env.is_done() {
        return Err(Error::Usage("train_epoch needs a freshly reset environment".into()));
    }
    let member = rng.random_range(0..ensemble.len());
    let mut q_des = env.reference();
    let mut obs = env.observe(&q_des);
    let mut stats = EpochStats {
        member,
        steps: 0,
        total_reward: 0.0,
        mean_reward: 0.0,
        rmse_pos: 0.0,
        failed: false,
        updates: 0,
        last_update: None,
    };
    let mut sq_err = 0.0;
    while !env.is_done() {
        let q = env.state();
        let fused = hybrid_action(ensemble, gains, &obs, &q, &q_des, cfg.residual_scale, false, rng)?;
        let out = env.step(fused.command())?;
        let s = obs.to_array().to_vec();
        ensemble.buffer.push(&Transition {
            s,
            a: fused.a,
            r: out.reward,
            s_next: out.obs.to_array().to_vec(),
            done: out.failed,
        })?;
        stats.steps += 1;
        stats.total_reward += out.reward;
        if !out.failed {
            sq_err += (out.q.x_w - out.q_des.x_w).powi(2);
        }
        stats.failed = out.failed;
        obs = out.obs;
        q_des = out.q_des;

        ensemble.steps_since_update += 1;
        if ensemble.steps_since_update >= cfg.update_every {
            let n = ensemble.steps_since_update;
            let upd = {
                let Ensemble { members, buffer, .. } = &mut *ensemble;
                members[member].update(buffer, n, rng)?
            };
            if upd.status == UpdateStatus::Updated {
                ensemble.steps_since_update = 0;
                stats.updates += 1;
            }
            stats.last_update = Some(upd);
        }
    }
    stats.mean_reward = stats.total_reward / stats.steps as f64;
    stats.rmse_pos = (sq_err / stats.steps as f64).sqrt();
    Ok(stats)
}

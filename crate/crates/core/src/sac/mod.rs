//! Soft actor-critic for one scalar-action agent: twin critics with Polyak
//! targets, a tanh-squashed Gaussian actor and automatic temperature tuning.

mod buffer;
pub mod toy;

pub use buffer::{Batch, ReplayBuffer, Transition, DEFAULT_CAPACITY};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    actor_head, log_one_minus_tanh_sq, sample_squashed, AdamConfig, AdamState, GaussianAction, Mlp,
    OutputInit, SquashedSample,
};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
    pub gamma: f64,
    /// Target networks keep this fraction of themselves per update.
    pub polyak: f64,
    pub batch_size: usize,
    pub target_entropy: f64,
    pub init_alpha: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            adam: AdamConfig::default(),
            gamma: 0.99,
            polyak: 0.995,
            batch_size: 64,
            target_entropy: -1.0,
            init_alpha: 0.2,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Config { field: format!("sac.{field}"), msg: msg.into() });
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "need at least one non-empty hidden layer");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return bad("polyak", "must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.init_alpha > 0.0) {
            return bad("init_alpha", "must be positive");
        }
        if !(self.adam.lr > 0.0) {
            return bad("adam.lr", "must be positive");
        }
        Ok(())
    }

    pub fn actor_dims(&self, obs_dim: usize) -> Vec<usize> {
        let mut d = vec![obs_dim];
        d.extend(&self.hidden);
        d.push(2);
        d
    }

    pub fn critic_dims(&self, obs_dim: usize) -> Vec<usize> {
        let mut d = vec![obs_dim + 1];
        d.extend(&self.hidden);
        d.push(1);
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent {
    pub cfg: SacConfig,
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_targ: Mlp,
    pub q2_targ: Mlp,
    pub log_alpha: f64,
    pub actor_opt: AdamState,
    pub q1_opt: AdamState,
    pub q2_opt: AdamState,
    pub alpha_opt: AdamState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActOutput {
    pub dist: GaussianAction,
    pub sample: Option<SquashedSample>,
    /// Squashed action actually proposed: `tanh(mean)` or the sample.
    pub action: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateStatus {
    Updated,
    /// Fewer transitions than one batch; nothing changed.
    InsufficientData,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub status: UpdateStatus,
    pub steps: usize,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
}

fn gaussian_log_pdf_std(eps: f64, log_std: f64) -> f64 {
    -0.5 * eps * eps - log_std - HALF_LN_2PI
}

impl SacAgent {
    /// Hidden layers use a fan-in uniform init; the actor's output layer is
    /// zeroed so a fresh policy is `N(0, 1)` before squashing.
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, cfg: SacConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let actor = Mlp::new(&cfg.actor_dims(obs_dim), OutputInit::Zero, rng)?;
        let cd = cfg.critic_dims(obs_dim);
        let q1 = Mlp::new(&cd, OutputInit::FanIn, rng)?;
        let q2 = Mlp::new(&cd, OutputInit::FanIn, rng)?;
        Ok(Self {
            actor_opt: AdamState::new(actor.params().len(), cfg.adam),
            q1_opt: AdamState::new(q1.params().len(), cfg.adam),
            q2_opt: AdamState::new(q2.params().len(), cfg.adam),
            alpha_opt: AdamState::new(1, cfg.adam),
            log_alpha: cfg.init_alpha.ln(),
            q1_targ: q1.clone(),
            q2_targ: q2.clone(),
            actor,
            q1,
            q2,
            cfg,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Pre-squash action distribution at `s`.
    pub fn policy(&self, s: &[f64]) -> Result<GaussianAction> {
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation".into()));
        }
        let out = self.actor.forward_one(s)?;
        let (mean, log_std, _) = actor_head(&out);
        Ok(GaussianAction::from_log_std(mean, log_std))
    }

    pub fn act<R: Rng + ?Sized>(&self, s: &[f64], deterministic: bool, rng: &mut R) -> Result<ActOutput> {
        let dist = self.policy(s)?;
        if deterministic {
            return Ok(ActOutput { dist, sample: None, action: dist.mean.tanh() });
        }
        let sample = sample_squashed(&dist, rng);
        Ok(ActOutput { dist, sample: Some(sample), action: sample.a })
    }

    /// Run `n_grad_steps` SAC gradient steps on minibatches from `buffer`.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        n_grad_steps: usize,
        rng: &mut R,
    ) -> Result<UpdateStats> {
        if buffer.obs_dim() != self.obs_dim() {
            return Err(Error::Shape("buffer and agent observation sizes differ".into()));
        }
        let mut stats = UpdateStats {
            status: UpdateStatus::Updated,
            steps: 0,
            critic_loss: 0.0,
            actor_loss: 0.0,
            alpha: self.alpha(),
            entropy: 0.0,
        };
        if buffer.len() < self.cfg.batch_size {
            log::warn!(
                "skipping SAC update: buffer holds {} < batch {}",
                buffer.len(),
                self.cfg.batch_size
            );
            stats.status = UpdateStatus::InsufficientData;
            return Ok(stats);
        }
        for _ in 0..n_grad_steps {
            let batch = buffer.sample(self.cfg.batch_size, rng)?;
            let (cl, al, ent) = self.gradient_step(&batch, rng)?;
            stats.critic_loss += cl;
            stats.actor_loss += al;
            stats.entropy += ent;
            stats.steps += 1;
        }
        if stats.steps > 0 {
            let n = stats.steps as f64;
            stats.critic_loss /= n;
            stats.actor_loss /= n;
            stats.entropy /= n;
        }
        stats.alpha = self.alpha();
        Ok(stats)
    }

    /// Squash reparameterized draws `z = μ + σ·ε` for every row of a batched
    /// actor pass. Returns per-row `(a, log_prob, log_std, clamped)`.
    fn squash_rows(out: &[f64], eps: &[f64]) -> Vec<(f64, f64, f64, bool)> {
        eps.iter()
            .enumerate()
            .map(|(r, &e)| {
                let (mean, log_std, clamped) = actor_head(&out[2 * r..2 * r + 2]);
                let z = mean + log_std.exp() * e;
                let logp = gaussian_log_pdf_std(e, log_std) - log_one_minus_tanh_sq(z);
                (z.tanh(), logp, log_std, clamped)
            })
            .collect()
    }

    /// Soft Bellman targets `r + γ(1−d)(min Q'(s', a') − α·logπ(a'|s'))`
    /// with `a'` built from the given standard-normal draws.
    pub fn critic_targets(&self, b: &Batch, eps_next: &[f64]) -> Result<Vec<f64>> {
        let n = b.size;
        let alpha = self.alpha();
        let next_out = self.actor.forward(&b.s_next, n)?;
        let next = Self::squash_rows(next_out.output(), eps_next);
        let next_a: Vec<f64> = next.iter().map(|x| x.0).collect();
        let next_in = concat_action(&b.s_next, &next_a, self.obs_dim());
        let t1 = self.q1_targ.forward(&next_in, n)?;
        let t2 = self.q2_targ.forward(&next_in, n)?;
        Ok((0..n)
            .map(|i| {
                let soft = t1.output()[i].min(t2.output()[i]) - alpha * next[i].1;
                b.r[i] + if b.done[i] { 0.0 } else { self.cfg.gamma * soft }
            })
            .collect())
    }

    /// Actor loss `mean(α·logπ − min(Q1, Q2))` at the reparameterized draws
    /// `eps`, its parameter gradient, and the mean log-probability.
    pub fn actor_loss_grad(&self, s: &[f64], eps: &[f64]) -> Result<(f64, Vec<f64>, f64)> {
        let n = eps.len();
        let d = self.obs_dim();
        let nf = n as f64;
        let alpha = self.alpha();
        let tape = self.actor.forward(s, n)?;
        let pi = Self::squash_rows(tape.output(), eps);
        let pi_a: Vec<f64> = pi.iter().map(|x| x.0).collect();
        let pi_in = concat_action(s, &pi_a, d);
        let t1 = self.q1.forward(&pi_in, n)?;
        let t2 = self.q2.forward(&pi_in, n)?;
        let sel1: Vec<f64> = (0..n).map(|i| if t1.output()[i] <= t2.output()[i] { 1.0 } else { 0.0 }).collect();
        let sel2: Vec<f64> = sel1.iter().map(|s| 1.0 - s).collect();
        let dq1 = self.q1.backward(&t1, &sel1, false)?.input;
        let dq2 = self.q2.backward(&t2, &sel2, false)?.input;

        let mut loss = 0.0;
        let mut logp_sum = 0.0;
        let mut head_grad = vec![0.0; 2 * n];
        for i in 0..n {
            let (a, logp, log_std, clamped) = pi[i];
            let qmin = t1.output()[i].min(t2.output()[i]);
            loss += (alpha * logp - qmin) / nf;
            logp_sum += logp;
            let dq_da = dq1[i * (d + 1) + d] + dq2[i * (d + 1) + d];
            let sigma = log_std.exp();
            let dq_dz = dq_da * (1.0 - a * a);
            // d logπ/dμ = 2a, d logπ/d logσ = −1 + 2a·σ·ε.
            head_grad[2 * i] = (alpha * 2.0 * a - dq_dz) / nf;
            head_grad[2 * i + 1] = if clamped {
                0.0
            } else {
                (alpha * (-1.0 + 2.0 * a * sigma * eps[i]) - dq_dz * sigma * eps[i]) / nf
            };
        }
        let g = self.actor.backward(&tape, &head_grad, true)?;
        Ok((loss, g.params, logp_sum / nf))
    }

    /// One critic, actor and temperature step. Returns
    /// `(critic_loss, actor_loss, entropy estimate)`.
    pub fn gradient_step<R: Rng + ?Sized>(&mut self, b: &Batch, rng: &mut R) -> Result<(f64, f64, f64)> {
        let n = b.size;
        let draw = |rng: &mut R| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let eps_next = draw(rng);
        let eps_pi = draw(rng);

        let y = self.critic_targets(b, &eps_next)?;
        let cur_in = concat_action(&b.s, &b.a, self.obs_dim());
        let mut critic_loss = 0.0;
        for (net, opt) in [(&mut self.q1, &mut self.q1_opt), (&mut self.q2, &mut self.q2_opt)] {
            let (l, g) = critic_loss_grad(net, &cur_in, &y)?;
            critic_loss += l;
            opt.step(net.params_mut(), &g)?;
        }

        let (actor_loss, g, mean_logp) = self.actor_loss_grad(&b.s, &eps_pi)?;
        self.actor_opt.step(self.actor.params_mut(), &g)?;

        // Temperature: minimize α·(−logπ − H̄) over log α.
        let grad_log_alpha = self.alpha() * (-mean_logp - self.cfg.target_entropy);
        let mut la = [self.log_alpha];
        self.alpha_opt.step(&mut la, &[grad_log_alpha])?;
        self.log_alpha = la[0];

        let rho = self.cfg.polyak;
        self.q1_targ.polyak_from(&self.q1, rho);
        self.q2_targ.polyak_from(&self.q2, rho);

        if !(self.actor.is_finite() && self.q1.is_finite() && self.q2.is_finite()) {
            return Err(Error::NonFinite("network parameters after update".into()));
        }
        Ok((critic_loss / 2.0, actor_loss, -mean_logp))
    }
}

/// Mean squared error of a critic against fixed targets, and its gradient.
pub fn critic_loss_grad(net: &Mlp, input: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = y.len();
    let nf = n as f64;
    let tape = net.forward(input, n)?;
    let q = tape.output();
    let grad: Vec<f64> = (0..n).map(|i| 2.0 * (q[i] - y[i]) / nf).collect();
    let loss = (0..n).map(|i| (q[i] - y[i]).powi(2)).sum::<f64>() / nf;
    Ok((loss, net.backward(&tape, &grad, true)?.params))
}

/// Row-wise `[s | a]` critic input.
pub fn concat_action(s: &[f64], a: &[f64], obs_dim: usize) -> Vec<f64> {
    let rows = a.len();
    let mut out = Vec::with_capacity(rows * (obs_dim + 1));
    for r in 0..rows {
        out.extend_from_slice(&s[r * obs_dim..(r + 1) * obs_dim]);
        out.push(a[r]);
    }
    out
}

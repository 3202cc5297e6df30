//! A 1-D point mass that must be driven to the origin. Small enough to
//! train in seconds, used as a learning sanity check for the SAC agent.

use rand::Rng;

use super::{ReplayBuffer, SacAgent, SacConfig, Transition, UpdateStatus};
use crate::error::Result;

/// Episodic environment with a scalar action in (−1, 1).
pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64>;
    /// Returns `(s_next, reward, terminal, episode_over)`.
    fn step(&mut self, a: f64) -> (Vec<f64>, f64, bool, bool);
}

/// `ẍ = 2a − ẋ`, reward `exp(−(x/0.25)²)`, 100 steps of 0.05 s.
#[derive(Debug, Clone, Default)]
pub struct PointMass {
    x: f64,
    v: f64,
    t: usize,
}

impl PointMass {
    pub const DT: f64 = 0.05;
    pub const HORIZON: usize = 100;

    fn obs(&self) -> Vec<f64> {
        vec![self.x, self.v]
    }
}

impl Environment for PointMass {
    fn obs_dim(&self) -> usize {
        2
    }

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.x = rng.random_range(-1.0..1.0);
        self.v = 0.0;
        self.t = 0;
        self.obs()
    }

    fn step(&mut self, a: f64) -> (Vec<f64>, f64, bool, bool) {
        // Semi-implicit Euler is plenty for a damped double integrator.
        self.v += (2.0 * a - self.v) * Self::DT;
        self.x += self.v * Self::DT;
        self.t += 1;
        let r = (-(self.x / 0.25).powi(2)).exp();
        (self.obs(), r, false, self.t >= Self::HORIZON)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ToyTrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub update_every: usize,
    /// Uniform random actions before the first update.
    pub warmup: usize,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self { epochs: 50, steps_per_epoch: 400, update_every: 50, warmup: 400 }
    }
}

/// Mean per-step reward over `episodes` episodes of `policy`.
pub fn evaluate<E, R, F>(env: &mut E, episodes: usize, rng: &mut R, mut policy: F) -> Result<f64>
where
    E: Environment,
    R: Rng + ?Sized,
    F: FnMut(&[f64], &mut R) -> Result<f64>,
{
    let (mut total, mut n) = (0.0, 0usize);
    for _ in 0..episodes {
        let mut s = env.reset(rng);
        loop {
            let a = policy(&s, rng)?;
            let (s2, r, term, over) = env.step(a);
            total += r;
            n += 1;
            s = s2;
            if term || over {
                break;
            }
        }
    }
    Ok(total / n.max(1) as f64)
}

pub fn random_baseline<E: Environment, R: Rng + ?Sized>(env: &mut E, episodes: usize, rng: &mut R) -> f64 {
    evaluate(env, episodes, rng, |_, rng| Ok(rng.random_range(-1.0..1.0))).expect("random policy is infallible")
}

/// Train a fresh agent and return it with its per-epoch mean step reward.
pub fn train<E: Environment, R: Rng + ?Sized>(
    env: &mut E,
    sac: SacConfig,
    cfg: ToyTrainConfig,
    rng: &mut R,
) -> Result<(SacAgent, Vec<f64>)> {
    let mut agent = SacAgent::new(env.obs_dim(), sac, rng)?;
    let mut buffer = ReplayBuffer::new(env.obs_dim(), 100_000);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut s = env.reset(rng);
    let mut total_steps = 0usize;
    let mut since_update = 0usize;
    for _ in 0..cfg.epochs {
        let mut epoch_reward = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let a = if total_steps < cfg.warmup {
                rng.random_range(-0.999..0.999)
            } else {
                agent.act(&s, false, rng)?.action
            };
            let a = a.clamp(-1.0 + 1e-9, 1.0 - 1e-9);
            let (s2, r, term, over) = env.step(a);
            buffer.push(&Transition { s: s.clone(), a, r, s_next: s2.clone(), done: term })?;
            epoch_reward += r;
            total_steps += 1;
            since_update += 1;
            s = if term || over { env.reset(rng) } else { s2 };
            if total_steps >= cfg.warmup && since_update >= cfg.update_every {
                let stats = agent.update(&buffer, since_update, rng)?;
                if stats.status == UpdateStatus::Updated {
                    since_update = 0;
                }
            }
        }
        curve.push(epoch_reward / cfg.steps_per_epoch as f64);
    }
    Ok((agent, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn point_mass_is_damped_toward_rest() {
        let mut env = PointMass::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        env.reset(&mut rng);
        let mut last = env.clone();
        for _ in 0..PointMass::HORIZON {
            let (_, r, term, _) = env.step(0.0);
            assert!(!term && (0.0..=1.0).contains(&r));
            assert_eq!(env.x, last.x);
            last = env.clone();
        }
    }

    #[test]
    fn short_training_is_bit_reproducible() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let cfg = ToyTrainConfig { epochs: 3, steps_per_epoch: 400, update_every: 50, warmup: 200 };
            train(&mut PointMass::default(), SacConfig::default(), cfg, &mut rng).unwrap()
        };
        let (a1, c1) = run();
        let (a2, c2) = run();
        assert_eq!(a1, a2);
        assert_eq!(c1, c2);
    }
}

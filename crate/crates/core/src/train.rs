//! Training driver: repeated fused-policy epochs on randomized velocity
//! profiles, with per-epoch statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Config, TrainConfig};
use crate::error::Result;
use crate::fusion::{train_epoch, Ensemble, EpochStats};
use crate::lqr::LqrGains;
use crate::tasks::{TrajectoryProfile, WipEnv, OBS_DIM};

pub const EPOCH_CSV_HEADER: &str =
    "epoch,steps,member,total_reward,mean_reward,rmse_pos,failed,critic_loss,actor_loss,alpha";

/// A velocity profile with a random cruise speed (and sign, if symmetric).
pub fn sample_profile<R: Rng + ?Sized>(cfg: &TrainConfig, rng: &mut R) -> TrajectoryProfile {
    let mut amp = if cfg.amplitude_max > cfg.amplitude_min {
        rng.random_range(cfg.amplitude_min..cfg.amplitude_max)
    } else {
        cfg.amplitude_min
    };
    if cfg.symmetric && rng.random_bool(0.5) {
        amp = -amp;
    }
    TrajectoryProfile::quintic_velocity(amp, cfg.ramp)
}

pub fn epoch_csv_row(epoch: usize, s: &EpochStats) -> String {
    let (cl, al, alpha) = s.last_update.map_or((f64::NAN, f64::NAN, f64::NAN), |u| (u.critic_loss, u.actor_loss, u.alpha));
    format!(
        "{epoch},{},{},{},{},{},{},{cl},{al},{alpha}",
        s.steps, s.member, s.total_reward, s.mean_reward, s.rmse_pos, s.failed
    )
}

pub struct Trained {
    pub ensemble: Ensemble,
    pub gains: LqrGains,
    pub epochs: Vec<EpochStats>,
}

/// Fresh ensemble trained for `cfg.train.epochs` epochs. `on_epoch` sees
/// each finished epoch, e.g. to log or checkpoint.
pub fn train<F>(cfg: &Config, mut on_epoch: F) -> Result<Trained>
where
    F: FnMut(usize, &EpochStats, &Ensemble) -> Result<()>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gains = cfg.lqr.lqr_gains()?;
    let plant = cfg.training_plant()?;
    let mut ensemble =
        Ensemble::new(cfg.fusion.ensemble_size, OBS_DIM, &cfg.sac, cfg.fusion.buffer_capacity, &mut rng)?;
    let mut epochs = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        let profile = sample_profile(&cfg.train, &mut rng);
        let mut env = WipEnv::new(plant, profile, cfg.env)?;
        let init = crate::bench::TaskParams { init_pitch: cfg.train.init_pitch, ..cfg.tasks }.initial_state(&mut rng);
        env.reset(init)?;
        let stats = train_epoch(&mut ensemble, &mut env, &gains, &cfg.fusion, &mut rng)?;
        log::info!(
            "epoch {epoch}: reward {:.1} rmse_pos {:.4} failed {} member {}",
            stats.total_reward,
            stats.rmse_pos,
            stats.failed,
            stats.member
        );
        on_epoch(epoch, &stats, &ensemble)?;
        epochs.push(stats);
    }
    Ok(Trained { ensemble, gains, epochs })
}

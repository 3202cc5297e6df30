//! Run configuration: one TOML section per subsystem, every field optional
//! with defaults, plus a stable hash of the resolved values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{default_cases, BenchTask, BenchmarkCase, TaskParams};
use crate::dynamics::WipParams;
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::lqr::{default_q, LqrGains, DEFAULT_SIGMA2_H, DEFAULT_GAINS};
use crate::sac::SacConfig;
use crate::tasks::EnvConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqrConfig {
    pub gains: [f64; 4],
    pub sigma2_h: f64,
    /// State weights used by `lqr-synth`.
    pub q_diag: [f64; 4],
    pub r: f64,
}

impl Default for LqrConfig {
    fn default() -> Self {
        Self { gains: DEFAULT_GAINS, sigma2_h: DEFAULT_SIGMA2_H, q_diag: default_q(), r: 1.0 }
    }
}

impl LqrConfig {
    pub fn lqr_gains(&self) -> Result<LqrGains> {
        let field = if self.sigma2_h > 0.0 && self.sigma2_h.is_finite() { "lqr.gains" } else { "lqr.sigma2_h" };
        LqrGains::new(self.gains, self.sigma2_h).map_err(|e| field_err(field, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Write an intermediate checkpoint every this many epochs (0: only at end).
    pub checkpoint_every: usize,
    /// Index into the case list of the plant used for training.
    pub case: usize,
    /// Cruise velocities are drawn uniformly from this range, m/s.
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    /// Draw the velocity sign at random as well.
    pub symmetric: bool,
    pub ramp: f64,
    /// Half-width of the uniform initial pitch at each episode start, rad.
    pub init_pitch: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            checkpoint_every: 10,
            case: 0,
            amplitude_min: 0.25,
            amplitude_max: 0.75,
            symmetric: true,
            ramp: 4.0,
            init_pitch: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seeds: Vec<u64>,
    pub tasks: Vec<BenchTask>,
    pub cases: Vec<BenchmarkCase>,
    /// Sample the fused residual instead of executing its mean.
    pub stochastic: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2, 3, 4], tasks: BenchTask::ALL.to_vec(), cases: default_cases(), stochastic: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("runs") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub plant: WipParams,
    pub lqr: LqrConfig,
    pub sac: SacConfig,
    pub fusion: FusionConfig,
    pub env: EnvConfig,
    pub tasks: TaskParams,
    pub train: TrainConfig,
    pub bench: BenchConfig,
    pub paths: PathsConfig,
}

fn field_err(field: &str, msg: impl Into<String>) -> Error {
    Error::Config { field: field.into(), msg: msg.into() }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // toml reports the offending key in backticks.
            let field = msg.split('`').nth(1).unwrap_or("<document>").to_string();
            field_err(&field, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved TOML.
    /// Digest of everything that affects results; output paths are excluded.
    pub fn hash(&self) -> [u8; 32] {
        let canonical = Config { paths: PathsConfig::default(), ..self.clone() };
        Sha256::digest(canonical.to_toml().as_bytes()).into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate().map_err(|e| field_err("plant", e.to_string()))?;
        self.lqr.lqr_gains()?;
        if !(self.lqr.r > 0.0) {
            return Err(field_err("lqr.r", "must be positive"));
        }
        if self.lqr.q_diag.iter().any(|&q| !(q >= 0.0)) {
            return Err(field_err("lqr.q_diag", "weights must be non-negative"));
        }
        self.sac.validate()?;
        self.fusion.validate()?;
        if !(self.env.dt > 0.0) {
            return Err(field_err("env.dt", "must be positive"));
        }
        if self.env.horizon == 0 {
            return Err(field_err("env.horizon", "must be positive"));
        }
        if !(self.env.max_pitch > 0.0) || !(self.env.max_pos_err > 0.0) {
            return Err(field_err("env", "termination thresholds must be positive"));
        }
        if !(self.tasks.velocity_ramp > 0.0) || !(self.tasks.position_duration > 0.0) {
            return Err(field_err("tasks", "profile durations must be positive"));
        }
        let t = &self.train;
        if !(t.amplitude_min <= t.amplitude_max) || !t.amplitude_min.is_finite() || !t.amplitude_max.is_finite() {
            return Err(field_err("train.amplitude_min", "must not exceed amplitude_max"));
        }
        if !(t.ramp > 0.0) {
            return Err(field_err("train.ramp", "must be positive"));
        }
        if t.case >= self.bench.cases.len() {
            return Err(field_err("train.case", format!("index {} but only {} cases", t.case, self.bench.cases.len())));
        }
        if self.bench.seeds.is_empty() {
            return Err(field_err("bench.seeds", "need at least one seed"));
        }
        Ok(())
    }

    /// The plant used for training: the base plant under the training case.
    pub fn training_plant(&self) -> Result<WipParams> {
        crate::dynamics::apply_case(&self.plant, &self.bench.cases[self.train.case])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_yields_defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.sac.adam.lr, 1e-3);
        assert_eq!(c.sac.gamma, 0.99);
        assert_eq!(c.sac.polyak, 0.995);
        assert_eq!(c.sac.batch_size, 64);
        assert_eq!(c.fusion.ensemble_size, 10);
        assert_eq!(c.fusion.buffer_capacity, 1_000_000);
        assert_eq!(c.env.horizon, 4000);
        assert_eq!(c.lqr.gains, [-100.0, -315.0, -40.0, -40.0]);
    }

    #[test]
    fn resolved_config_round_trips_and_hash_is_stable() {
        let mut c = Config::default();
        c.train.epochs = 3;
        c.env.observation.history_inputs = false;
        let back = Config::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(c.hash(), Config::default().hash());
        assert_eq!(c.hash_hex().len(), 64);
        let mut moved = c.clone();
        moved.paths.out_dir = "elsewhere".into();
        assert_eq!(moved.hash(), c.hash());
    }

    #[test]
    fn echo_keeps_case_values() {
        let toml = Config::default().to_toml();
        for v in ["4.05", "8.05", "14.05", "1.3", "-0.12"] {
            assert!(toml.contains(v), "{v} missing from echo");
        }
    }

    #[test]
    fn errors_name_the_field() {
        let field = |text: &str| match Config::from_toml(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(field("[sac]\ngama = 0.9\n"), "gama");
        assert_eq!(field("[sac]\ngamma = 1.5\n"), "sac.gamma");
        assert_eq!(field("[fusion]\nresidual_scale = -1.0\n"), "fusion.residual_scale");
        assert_eq!(field("[train]\ncase = 7\n"), "train.case");
        assert_eq!(field("[lqr]\nsigma2_h = 0.0\n"), "lqr.sigma2_h");
    }
}

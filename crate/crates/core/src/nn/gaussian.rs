use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Scalar Gaussian action distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianAction {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianAction {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
            return Err(Error::Degenerate(format!("N({mean}, {variance})")));
        }
        Ok(Self { mean, variance })
    }

    pub fn from_log_std(mean: f64, log_std: f64) -> Self {
        Self { mean, variance: (2.0 * log_std).exp() }
    }

    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn log_pdf(&self, z: f64) -> f64 {
        let d = z - self.mean;
        -0.5 * d * d / self.variance - 0.5 * self.variance.ln() - HALF_LN_2PI
    }
}

/// `ln(1 − tanh²z)` without cancellation for large `|z|`.
pub fn log_one_minus_tanh_sq(z: f64) -> f64 {
    let az = z.abs();
    2.0 * (std::f64::consts::LN_2 - az - softplus(-2.0 * az))
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// A tanh-squashed Gaussian draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquashedSample {
    /// Pre-squash draw.
    pub z: f64,
    /// `tanh(z)`.
    pub a: f64,
    /// Log-density of `a` under the squashed distribution.
    pub log_prob: f64,
}

/// Log-density of the squashed variable at pre-squash point `z`.
pub fn squashed_log_prob(action: &GaussianAction, z: f64) -> f64 {
    action.log_pdf(z) - log_one_minus_tanh_sq(z)
}

/// Draw `z ~ N(mean, variance)` and squash it.
pub fn sample_squashed<R: Rng + ?Sized>(action: &GaussianAction, rng: &mut R) -> SquashedSample {
    let eps: f64 = rng.sample(StandardNormal);
    let z = action.mean + action.std() * eps;
    SquashedSample { z, a: z.tanh(), log_prob: squashed_log_prob(action, z) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn narrow_distribution_squashes_to_tanh_of_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = GaussianAction::from_log_std(0.7, -20.0);
        for _ in 0..10 {
            let s = sample_squashed(&g, &mut rng);
            assert!((s.a - 0.7f64.tanh()).abs() < 1e-8);
        }
    }

    #[test]
    fn symmetric_squashed_mean_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GaussianAction::new(0.0, 1.0).unwrap();
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let a = sample_squashed(&g, &mut rng).a;
            sum += a;
            sq += a * a;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn log_prob_matches_numeric_cdf_derivative() {
        // CDF of a = tanh(z) is Φ((atanh a − μ)/σ); the oracle integrates the
        // Gaussian density with Simpson's rule and differentiates numerically.
        let g = GaussianAction::new(0.3, 0.49).unwrap();
        let pdf = |z: f64| (-0.5 * (z - g.mean).powi(2) / g.variance).exp()
            / (2.0 * std::f64::consts::PI * g.variance).sqrt();
        let cdf = |a: f64| {
            let hi = a.atanh();
            let lo = g.mean - 12.0 * g.std();
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            let mut s = pdf(lo) + pdf(hi);
            for i in 1..n {
                s += pdf(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        for &a in &[-0.9, -0.5, 0.0, 0.25, 0.6, 0.95] {
            let h = 1e-5;
            let density = (cdf(a + h) - cdf(a - h)) / (2.0 * h);
            let lp = squashed_log_prob(&g, f64::atanh(a));
            assert!((lp.exp() - density).abs() < 1e-5 * density.max(1.0), "a={a}");
        }
    }

    #[test]
    fn stable_log_jacobian() {
        for z in [-30.0, -3.0, -0.1, 0.0, 0.5, 4.0, 50.0] {
            let direct = (1.0 - f64::tanh(z).powi(2)).ln();
            let stable = log_one_minus_tanh_sq(z);
            if direct.is_finite() {
                assert!((direct - stable).abs() < 1e-9, "z={z}");
            }
            assert!(stable.is_finite());
        }
    }

    #[test]
    fn rejects_degenerate() {
        assert!(GaussianAction::new(0.0, 0.0).is_err());
        assert!(GaussianAction::new(f64::NAN, 1.0).is_err());
    }
}

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervene::basis::OffsetMode;

/// Intervention hyperparameters `(t, k, s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionStrategy {
    /// Truncation of prior draws.
    pub truncation: f64,
    /// Directions are drawn from the top `k` principal components.
    pub top_k: usize,
    /// Scales `s′` are uniform on `[−s, s]`, in units of each direction's σ.
    pub scale: f64,
    pub directions_per_sample: usize,
    pub offset_mode: OffsetMode,
}

impl Default for InterventionStrategy {
    fn default() -> Self {
        Self {
            truncation: 1.0,
            top_k: 2,
            scale: 3.0,
            directions_per_sample: 2,
            offset_mode: OffsetMode::None,
        }
    }
}

impl InterventionStrategy {
    /// Plain conditional sampling: `s = 0`.
    pub fn observational(truncation: f64, top_k: usize) -> Self {
        Self {
            truncation,
            top_k,
            scale: 0.0,
            directions_per_sample: top_k.min(2),
            offset_mode: OffsetMode::None,
        }
    }

    pub fn validate(&self, latent_dim: usize) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.truncation > 0.0) || !self.truncation.is_finite() {
            errs.push(format!("truncation t must be > 0, got {}", self.truncation));
        }
        if self.top_k < 1 || self.top_k > latent_dim {
            errs.push(format!("top_k must be in [1, {latent_dim}], got {}", self.top_k));
        }
        if !(self.scale >= 0.0) || !self.scale.is_finite() {
            errs.push(format!("scale s must be >= 0, got {}", self.scale));
        }
        if self.directions_per_sample < 1 || self.directions_per_sample > self.top_k {
            errs.push(format!(
                "directions_per_sample must be in [1, top_k = {}], got {}",
                self.top_k, self.directions_per_sample
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::validation(errs.join("; ")))
        }
    }
}

/// Directions (0-based, distinct) and their signed scales for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyDraw {
    pub directions: Vec<usize>,
    pub scales: Vec<f64>,
}

impl StrategyDraw {
    /// Length-`k` nuisance vector: `s′` at each touched direction, 0 elsewhere.
    pub fn z_vector(&self, k: usize) -> Vec<f32> {
        let mut z = vec![0.0f32; k];
        for (&j, &s) in self.directions.iter().zip(&self.scales) {
            z[j] = s as f32;
        }
        z
    }
}

/// One draw from the strategy; the label never enters, so the draw is
/// identically distributed across classes.
pub fn sample_strategy_draw<R: Rng>(
    strategy: &InterventionStrategy,
    latent_dim: usize,
    rng: &mut R,
) -> Result<StrategyDraw> {
    strategy.validate(latent_dim)?;
    let directions = sample(rng, strategy.top_k, strategy.directions_per_sample).into_vec();
    let scales = directions
        .iter()
        .map(|_| {
            if strategy.scale == 0.0 {
                0.0
            } else {
                rng.gen_range(-strategy.scale..=strategy.scale)
            }
        })
        .collect();
    Ok(StrategyDraw { directions, scales })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::rng::stream_rng;

    #[test]
    fn zero_scale_and_single_direction() {
        let mut rng = stream_rng(1, 0);
        let s = InterventionStrategy::observational(1.0, 2);
        for _ in 0..50 {
            assert!(sample_strategy_draw(&s, 16, &mut rng).unwrap().scales.iter().all(|&v| v == 0.0));
        }
        let s = InterventionStrategy {
            top_k: 1,
            directions_per_sample: 1,
            ..Default::default()
        };
        for _ in 0..50 {
            assert_eq!(sample_strategy_draw(&s, 16, &mut rng).unwrap().directions, vec![0]);
        }
    }

    #[test]
    fn uniform_scales() {
        let mut rng = stream_rng(2, 0);
        let s = InterventionStrategy::default();
        let mut sum = 0.0;
        let mut count = 0;
        for _ in 0..50_000 {
            let d = sample_strategy_draw(&s, 16, &mut rng).unwrap();
            assert_eq!(d.directions.len(), 2);
            assert_ne!(d.directions[0], d.directions[1]);
            for v in d.scales {
                assert!((-3.0..=3.0).contains(&v));
                sum += v;
                count += 1;
            }
        }
        assert!((sum / count as f64).abs() < 0.02);
    }

    #[test]
    fn too_many_directions() {
        let s = InterventionStrategy {
            top_k: 2,
            directions_per_sample: 3,
            ..Default::default()
        };
        assert!(matches!(
            sample_strategy_draw(&s, 16, &mut stream_rng(0, 0)),
            Err(Error::Validation(_))
        ));
    }
}

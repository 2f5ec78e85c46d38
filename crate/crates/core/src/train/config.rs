use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ModelConfig, Preset};

/// Losses above this magnitude abort training.
pub const DIVERGENCE_GUARD: f64 = 1e6;

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Generator learning rate (encoder, P1, P2 and S).
    pub lr_g: f64,
    /// Discriminator learning rate.
    pub lr_d: f64,
    /// Outcome distillation weight.
    pub alpha_o: f64,
    /// Hint distillation weight.
    pub alpha_h: f64,
    pub e_max: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global-norm clip applied separately to each optimizer's gradient.
    pub grad_clip: Option<f64>,
    /// Generators minimize `-ln D` instead of `ln(1 - D)`.
    pub non_saturating: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset(Preset::Sanyo)
    }
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let (lr_g, lr_d, alpha_o, alpha_h) = match preset {
            Preset::Sanyo | Preset::Hanergy => (0.005, 0.001, 0.1, 0.5),
            Preset::Solar => (0.005, 0.001, 0.5, 0.001),
            Preset::Electricity => (0.001, 0.001, 0.1, 0.001),
        };
        TrainConfig {
            lr_g,
            lr_d,
            alpha_o,
            alpha_h,
            e_max: 200,
            batch_size: 32,
            patience: 10,
            seed: 0,
            grad_clip: Some(5.0),
            non_saturating: false,
        }
    }

    /// Checks ranges and the pairing with the model architecture.
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lr_g", self.lr_g)?;
        positive("lr_d", self.lr_d)?;
        if let Some(c) = self.grad_clip {
            positive("grad_clip", c)?;
        }
        for (name, v) in [("alpha_o", self.alpha_o), ("alpha_h", self.alpha_h)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.e_max == 0 {
            return Err(Error::Config("e_max must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if model.n_s == 1 && self.alpha_h > 0.0 {
            return Err(Error::Config(format!(
                "n_s = 1 leaves the student layer map undefined; set n_s >= 2 or alpha_h = 0 (got alpha_h = {})",
                self.alpha_h
            )));
        }
        Ok(())
    }
}

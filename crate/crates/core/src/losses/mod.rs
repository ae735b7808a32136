//! Content, adversarial and triplet losses, and their per-stage combination.
//!
//! Every loss is recorded on a [`Tape`](crate::tensor::Tape) and returns a
//! scalar `[1]` var, so the same code drives f32 training and f64
//! gradient verification.

mod extractor;
mod stage;
mod terms;

pub use extractor::{FeatureExtractor, FeatureLayer, DEFAULT_FEATURE_WIDTHS};
pub use stage::{stage_loss, LossBreakdown, StageLossInput};
pub use terms::{adversarial_gen_loss, discriminator_loss, feature_distance, feature_loss, mse_loss, triplet_loss};

use crate::{Error, Result};

/// Floor applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Where the feature rescaling factor is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FeatureScaleMode {
    /// Multiply the feature maps, so the loss scales by the square.
    #[default]
    Features,
    /// Multiply the loss once.
    Loss,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TripletMode {
    /// `sum_i (d(a,p) - d(a,n))`, unbounded below.
    Literal,
    /// `sum_i max(d(a,p) - d(a,n) + margin, 0)`.
    #[default]
    Hinged,
}

/// The space in which triplet distances are measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TripletEmbedding {
    /// Rescaled feature-extractor output.
    #[default]
    Features,
    Pixels,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the adversarial term.
    pub alpha: f64,
    pub feature_scale: f64,
    pub feature_scale_mode: FeatureScaleMode,
    pub triplet_weight: f64,
    pub triplet_margin: f64,
    pub triplet_mode: TripletMode,
    pub triplet_embedding: TripletEmbedding,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            feature_scale: 1.0 / 12.75,
            feature_scale_mode: FeatureScaleMode::Features,
            triplet_weight: 0.1,
            triplet_margin: 1.0,
            triplet_mode: TripletMode::Hinged,
            triplet_embedding: TripletEmbedding::Features,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("alpha", self.alpha, self.alpha > 0.0),
            ("feature_scale", self.feature_scale, self.feature_scale > 0.0),
            ("triplet_weight", self.triplet_weight, self.triplet_weight >= 0.0),
            ("triplet_margin", self.triplet_margin, self.triplet_margin >= 0.0),
        ];
        for (name, v, ok) in checks {
            if !ok || !v.is_finite() {
                return Err(Error::Config(format!("loss weight {name} = {v} is out of range")));
            }
        }
        Ok(())
    }

    /// Factor multiplying the mean squared feature difference.
    pub fn feature_factor(&self) -> f64 {
        match self.feature_scale_mode {
            FeatureScaleMode::Features => self.feature_scale * self.feature_scale,
            FeatureScaleMode::Loss => self.feature_scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let w = LossWeights::default();
        w.validate().unwrap();
        assert!((w.feature_factor() - 1.0 / 162.5625).abs() < 1e-15);
    }

    #[test]
    fn non_positive_alpha_is_rejected() {
        let w = LossWeights { alpha: 0.0, ..LossWeights::default() };
        assert!(w.validate().is_err());
        let w = LossWeights { triplet_margin: -1.0, ..LossWeights::default() };
        assert!(w.validate().is_err());
    }
}

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Corruption model and its strength.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    /// Additive zero-mean Gaussian with standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// `round(density * numel)` elements set to 0 or 1 with equal odds.
    SaltPepper { density: f64 },
    /// Multiplicative: `x + x * n` with `n ~ N(0, variance)`.
    Speckle { variance: f64 },
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::Gaussian { .. } => "gaussian",
            NoiseKind::SaltPepper { .. } => "salt_pepper",
            NoiseKind::Speckle { .. } => "speckle",
        }
    }

    pub fn parameter(&self) -> f64 {
        match *self {
            NoiseKind::Gaussian { sigma } => sigma,
            NoiseKind::SaltPepper { density } => density,
            NoiseKind::Speckle { variance } => variance,
        }
    }

    /// Parameter range covered by the reference noise-robustness protocol.
    pub fn tested_range(&self) -> (f64, f64) {
        match self {
            NoiseKind::Gaussian { .. } => (0.001, 0.01),
            NoiseKind::SaltPepper { .. } | NoiseKind::Speckle { .. } => (0.01, 0.05),
        }
    }
}

/// A reproducible noise draw: the same spec always yields the same corruption.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    /// Parse `kind:param` (`gaussian:0.005`, `salt_pepper:0.03`,
    /// `speckle:0.02`) with seed 0.
    pub fn parse(text: &str) -> Result<Self> {
        let (kind, param) = text
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("noise {text:?}: expected kind:param")))?;
        let p: f64 = param
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("noise {text:?}: {param:?} is not a number")))?;
        let kind = match kind.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "gaussian" => NoiseKind::Gaussian { sigma: p },
            "salt_pepper" | "saltpepper" | "sp" => NoiseKind::SaltPepper { density: p },
            "speckle" => NoiseKind::Speckle { variance: p },
            other => {
                return Err(Error::Config(format!(
                    "unknown noise kind {other:?}; expected gaussian, salt_pepper or speckle"
                )))
            }
        };
        let spec = Self::new(kind, 0);
        spec.validate()?;
        Ok(spec)
    }

    /// Reject parameters with no meaning. Values outside the tested range
    /// are accepted with a warning.
    pub fn validate(&self) -> Result<()> {
        let p = self.kind.parameter();
        if !p.is_finite() || p < 0.0 {
            return Err(Error::Config(format!("{} parameter must be finite and >= 0, got {p}", self.kind.name())));
        }
        if matches!(self.kind, NoiseKind::SaltPepper { .. }) && p > 1.0 {
            return Err(Error::Config(format!("salt_pepper density must be <= 1, got {p}")));
        }
        let (lo, hi) = self.kind.tested_range();
        if p != 0.0 && !(lo..=hi).contains(&p) {
            log::warn!("{} parameter {p} is outside the tested range [{lo}, {hi}]", self.kind.name());
        }
        Ok(())
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.name(), self.kind.parameter())
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// Corrupt `img` (values in `[0, 1]`, any shape). Results are clamped to `[0, 1]`.
pub fn add_noise(img: &Tensor, spec: &NoiseSpec) -> Result<Tensor> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = img.clone();
    match spec.kind {
        NoiseKind::Gaussian { sigma } => {
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
                for v in out.data_mut() {
                    *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
                }
            }
        }
        NoiseKind::Speckle { variance } => {
            if variance > 0.0 {
                let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
                for v in out.data_mut() {
                    let x = *v as f64;
                    *v = (x + x * normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
                }
            }
        }
        NoiseKind::SaltPepper { density } => {
            let n = out.numel();
            let count = ((density * n as f64).round() as usize).min(n);
            let chosen = index::sample(&mut rng, n, count);
            let data = out.data_mut();
            for i in chosen {
                data[i] = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(out)
}

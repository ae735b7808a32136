use indexmap::IndexMap;

use super::{ParamGrads, ParamKind, ParamSet, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every trainable tensor of one
/// [`ParamSet`], plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: IndexMap<String, (Tensor<f32>, Tensor<f32>)>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let moments = params
            .trainable()
            .map(|(name, t)| {
                let z = Tensor::zeros(t.shape().to_vec());
                (name.to_owned(), (z.clone(), z))
            })
            .collect();
        Self {
            config,
            step: 0,
            moments,
        }
    }

    /// Rebuild from persisted parts.
    pub fn from_parts(
        config: AdamConfig,
        step: u64,
        moments: impl IntoIterator<Item = (String, Tensor<f32>, Tensor<f32>)>,
    ) -> Self {
        Self {
            config,
            step,
            moments: moments.into_iter().map(|(n, m, v)| (n, (m, v))).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.config.lr = lr;
    }

    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor<f32>, &Tensor<f32>)> {
        self.moments.iter().map(|(n, (m, v))| (n.as_str(), m, v))
    }

    /// One bias-corrected Adam update of every trainable tensor in `params`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamGrads) -> Result<()> {
        let names: Vec<(usize, String)> = params
            .iter()
            .enumerate()
            .filter(|(_, (_, k, _))| *k == ParamKind::Trainable)
            .map(|(i, (n, _, _))| (i, n.to_owned()))
            .collect();
        // Validate everything before mutating anything.
        for (i, name) in &names {
            let g = grads
                .get(*i)
                .ok_or_else(|| Error::Contract(format!("missing gradient for {name:?}")))?;
            let (m, _) = self
                .moments
                .get(name)
                .ok_or_else(|| Error::Contract(format!("optimizer state has no slot for {name:?}")))?;
            if g.shape() != m.shape() || params.get(name)?.shape() != m.shape() {
                return Err(Error::shape("adam_step", format!("{name}: state/gradient shape mismatch")));
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = (1.0 - (beta1 as f64).powi(t)) as f32;
        let bc2 = (1.0 - (beta2 as f64).powi(t)) as f32;
        for (i, name) in &names {
            let g = grads.get(*i).expect("validated above");
            let (m, v) = self.moments.get_mut(name).expect("validated above");
            let p = params.get_mut(name)?;
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

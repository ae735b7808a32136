use indexmap::IndexMap;
use rand::Rng;

use super::ops::norm::{BatchStats, BATCH_NORM_MOMENTUM};
use super::{Gradients, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Persistent state outside the optimizer (batch-norm running stats).
    Buffer,
}

/// Named network tensors in a stable insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: IndexMap<String, (ParamKind, Tensor<f32>)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor<f32>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        self.entries.insert(name, (kind, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.entries
            .get(name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Config(format!("no parameter named {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<f32>> {
        self.entries
            .get_mut(name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Config(format!("no parameter named {name:?}")))
    }

    pub fn kind(&self, name: &str) -> Option<ParamKind> {
        self.entries.get(name).map(|(k, _)| *k)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ParamKind, &Tensor<f32>)> {
        self.entries.iter().map(|(n, (k, t))| (n.as_str(), *k, t))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.iter()
            .filter(|(_, k, _)| *k == ParamKind::Trainable)
            .map(|(n, _, t)| (n, t))
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.trainable().map(|(_, t)| t.numel()).sum()
    }

    /// Place every trainable tensor on `tape` as a leaf. Buffers stay
    /// reachable through the returned [`Bound`].
    pub fn bind<'p, T: Scalar>(&'p self, tape: &mut Tape<T>, requires_grad: bool) -> Bound<'p> {
        let vars = self
            .entries
            .values()
            .map(|(kind, t)| match kind {
                ParamKind::Trainable => Some(tape.leaf(t.cast(), requires_grad)),
                ParamKind::Buffer => None,
            })
            .collect();
        Bound { params: self, vars }
    }

    /// Fold observed batch statistics into the running estimates:
    /// `running = momentum * running + (1 - momentum) * observed`.
    pub fn commit_batch_stats(&mut self, updates: &[BatchStatsUpdate]) -> Result<()> {
        let m = BATCH_NORM_MOMENTUM;
        for up in updates {
            for (suffix, observed) in [("running_mean", &up.stats.mean), ("running_var", &up.stats.var)] {
                let t = self.get_mut(&format!("{}.{suffix}", up.prefix))?;
                if t.numel() != observed.len() {
                    return Err(Error::shape("commit_batch_stats", format!("{} channel mismatch", up.prefix)));
                }
                for (r, &o) in t.data_mut().iter_mut().zip(observed) {
                    *r = (m * *r as f64 + (1.0 - m) * o) as f32;
                }
            }
            let count = self.get_mut(&format!("{}.num_batches", up.prefix))?;
            count.data_mut()[0] += 1.0;
        }
        Ok(())
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_identical(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.iter().zip(other.iter()).all(|((na, ka, ta), (nb, kb, tb))| {
                na == nb
                    && ka == kb
                    && ta.shape() == tb.shape()
                    && ta.data().iter().zip(tb.data()).all(|(a, b)| a.to_bits() == b.to_bits())
            })
    }

    pub(crate) fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }
}

/// Batch statistics observed by a named batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStatsUpdate {
    pub prefix: String,
    pub stats: BatchStats,
}

/// A [`ParamSet`] placed on a tape.
pub struct Bound<'p> {
    params: &'p ParamSet,
    vars: Vec<Option<Var>>,
}

impl<'p> Bound<'p> {
    /// Bind to vars placed on a tape elsewhere, one per trainable entry in
    /// parameter order.
    pub fn from_vars(params: &'p ParamSet, trainable: &[Var]) -> Result<Self> {
        if trainable.len() != params.trainable().count() {
            return Err(Error::Contract(format!(
                "{} vars for {} trainable parameters",
                trainable.len(),
                params.trainable().count()
            )));
        }
        let mut it = trainable.iter().copied();
        let vars = params
            .entries
            .values()
            .map(|(kind, _)| match kind {
                ParamKind::Trainable => it.next(),
                ParamKind::Buffer => None,
            })
            .collect();
        Ok(Self { params, vars })
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.params
            .index_of(name)
            .and_then(|i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("no trainable parameter named {name:?}")))
    }

    pub fn buffer(&self, name: &str) -> Result<&'p Tensor<f32>> {
        self.params.get(name)
    }

    /// Trainable vars in parameter order.
    pub fn vars(&self) -> impl Iterator<Item = (&'p str, Var)> + '_ {
        self.params
            .iter()
            .zip(&self.vars)
            .filter_map(|((name, _, _), v)| v.map(|v| (name, v)))
    }

    /// Pull this network's parameter gradients out of a backward sweep.
    pub fn gradients<T: Scalar>(&self, grads: &Gradients<T>) -> ParamGrads {
        ParamGrads {
            grads: self
                .vars
                .iter()
                .map(|v| v.and_then(|v| grads.get(v)).map(Tensor::cast))
                .collect(),
        }
    }
}

/// Gradients aligned with the entries of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct ParamGrads {
    grads: Vec<Option<Tensor<f32>>>,
}

impl ParamGrads {
    pub fn from_vec(grads: Vec<Option<Tensor<f32>>>) -> Self {
        Self { grads }
    }

    pub fn get(&self, index: usize) -> Option<&Tensor<f32>> {
        self.grads.get(index).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// He-uniform initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn he_uniform(rng: &mut impl Rng, shape: impl Into<Vec<usize>>, fan_in: usize, gain: f64) -> Tensor<f32> {
    let bound = gain * (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut p = ParamSet::new();
        p.insert("a", ParamKind::Trainable, Tensor::zeros([1])).unwrap();
        assert!(p.insert("a", ParamKind::Buffer, Tensor::zeros([1])).is_err());
    }

    #[test]
    fn bind_skips_buffers() {
        let mut p = ParamSet::new();
        p.insert("w", ParamKind::Trainable, Tensor::zeros([2])).unwrap();
        p.insert("stat", ParamKind::Buffer, Tensor::zeros([2])).unwrap();
        let mut tape = Tape::<f32>::new();
        let b = p.bind(&mut tape, true);
        assert!(b.var("w").is_ok());
        assert!(b.var("stat").is_err());
        assert!(b.buffer("stat").is_ok());
        assert_eq!(tape.len(), 1);
    }

    #[test]
    fn he_uniform_respects_bound_and_seed() {
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = he_uniform(&mut r1, [64, 9], 9, 1.0);
        let b = he_uniform(&mut r2, [64, 9], 9, 1.0);
        assert_eq!(a, b);
        let bound = (6.0f32 / 9.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut p = ParamSet::new();
        p.insert("bn.running_mean", ParamKind::Buffer, Tensor::zeros([1])).unwrap();
        p.insert("bn.running_var", ParamKind::Buffer, Tensor::ones([1])).unwrap();
        p.insert("bn.num_batches", ParamKind::Buffer, Tensor::zeros([1])).unwrap();
        let up = BatchStatsUpdate {
            prefix: "bn".into(),
            stats: BatchStats { mean: vec![1.0], var: vec![3.0] },
        };
        p.commit_batch_stats(&[up]).unwrap();
        assert!((p.get("bn.running_mean").unwrap()[0] - 0.1).abs() < 1e-7);
        assert!((p.get("bn.running_var").unwrap()[0] - 1.2).abs() < 1e-6);
        assert_eq!(p.get("bn.num_batches").unwrap()[0], 1.0);
    }
}

use rand::Rng;

use crate::tensor::{he_uniform, BatchStatsUpdate, Bound, NormStats, ParamKind, ParamSet, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are reported for update.
    Train,
    /// Frozen running statistics; output depends only on the input.
    Eval,
}

/// One forward pass: its mode, and the batch statistics it observed.
#[derive(Debug)]
pub struct Pass {
    mode: Mode,
    updates: Vec<BatchStatsUpdate>,
}

impl Pass {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            updates: Vec::new(),
        }
    }

    pub fn train() -> Self {
        Self::new(Mode::Train)
    }

    pub fn eval() -> Self {
        Self::new(Mode::Eval)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Batch statistics observed so far; commit them with
    /// [`ParamSet::commit_batch_stats`].
    pub fn into_updates(self) -> Vec<BatchStatsUpdate> {
        self.updates
    }
}

pub(crate) fn add_conv(
    params: &mut ParamSet,
    rng: &mut impl Rng,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
) -> Result<()> {
    let w = he_uniform(rng, [cout, cin, k, k], cin * k * k, 1.0);
    params.insert(format!("{name}.weight"), ParamKind::Trainable, w)?;
    params.insert(format!("{name}.bias"), ParamKind::Trainable, Tensor::zeros([cout]))
}

pub(crate) fn add_batch_norm(params: &mut ParamSet, name: &str, c: usize) -> Result<()> {
    params.insert(format!("{name}.scale"), ParamKind::Trainable, Tensor::ones([c]))?;
    params.insert(format!("{name}.shift"), ParamKind::Trainable, Tensor::zeros([c]))?;
    params.insert(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros([c]))?;
    params.insert(format!("{name}.running_var"), ParamKind::Buffer, Tensor::ones([c]))?;
    params.insert(format!("{name}.num_batches"), ParamKind::Buffer, Tensor::zeros([1]))
}

pub(crate) fn add_dense(
    params: &mut ParamSet,
    rng: &mut impl Rng,
    name: &str,
    fin: usize,
    fout: usize,
    gain: f64,
) -> Result<()> {
    let w = he_uniform(rng, [fin, fout], fin, gain);
    params.insert(format!("{name}.weight"), ParamKind::Trainable, w)?;
    params.insert(format!("{name}.bias"), ParamKind::Trainable, Tensor::zeros([fout]))
}

pub(crate) fn conv<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Bound<'_>,
    name: &str,
    x: Var,
    stride: usize,
) -> Result<Var> {
    let w = net.var(&format!("{name}.weight"))?;
    let b = net.var(&format!("{name}.bias"))?;
    let k = tape.shape(w)[2];
    tape.conv2d(x, w, b, stride, k / 2)
}

pub(crate) fn batch_norm<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Bound<'_>,
    name: &str,
    x: Var,
    pass: &mut Pass,
) -> Result<Var> {
    let scale = net.var(&format!("{name}.scale"))?;
    let shift = net.var(&format!("{name}.shift"))?;
    match pass.mode {
        Mode::Train => {
            let (y, stats) = tape.batch_norm(x, scale, shift, NormStats::Batch)?;
            if let Some(stats) = stats {
                pass.updates.push(BatchStatsUpdate {
                    prefix: name.to_owned(),
                    stats,
                });
            }
            Ok(y)
        }
        Mode::Eval => {
            if net.buffer(&format!("{name}.num_batches"))?[0] == 0.0 {
                return Err(Error::Config(format!(
                    "batch-norm layer {name:?} has no running statistics yet; run a training-mode pass first"
                )));
            }
            let mean: Vec<T> = net.buffer(&format!("{name}.running_mean"))?.cast::<T>().into_data();
            let var: Vec<T> = net.buffer(&format!("{name}.running_var"))?.cast::<T>().into_data();
            let (y, _) = tape.batch_norm(x, scale, shift, NormStats::Running { mean: &mean, var: &var })?;
            Ok(y)
        }
    }
}

pub(crate) fn dense<T: Scalar>(tape: &mut Tape<T>, net: &Bound<'_>, name: &str, x: Var) -> Result<Var> {
    let w = net.var(&format!("{name}.weight"))?;
    let b = net.var(&format!("{name}.bias"))?;
    tape.dense(x, w, b)
}

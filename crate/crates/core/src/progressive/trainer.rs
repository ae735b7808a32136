use super::pipeline::{PipelineSpec, StageSpec};
use super::schedule::{Phase, TrainSchedule};
use crate::checkpoint::{Checkpoint, RngState};
use crate::data::{Batch, Dataset, PatchStream};
use crate::losses::{discriminator_loss, mse_loss, stage_loss, LossBreakdown, StageLossInput};
use crate::models::{discriminator_forward, generator_forward, Pass};
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor};
use crate::{Error, Result};

/// Column names of [`IterRecord::log_line`].
pub const LOG_HEADER: &str = "iter\tstage\tphase\tlr\tmse\tfeature\tadversarial\ttriplet\ttotal\td_loss";

/// Losses of one training iteration. Components are the weighted terms,
/// so they sum to `loss.total`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    /// 0-based global iteration.
    pub iteration: u64,
    pub stage: usize,
    pub phase: Phase,
    pub lr: f32,
    pub loss: LossBreakdown,
    /// Discriminator loss of the adversarial phases.
    pub d_loss: Option<f64>,
}

impl IterRecord {
    /// Tab-separated, shortest round-trip float formatting.
    pub fn log_line(&self) -> String {
        let l = &self.loss;
        let d = self.d_loss.map_or_else(|| "-".to_string(), |v| v.to_string());
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{d}",
            self.iteration,
            self.stage,
            self.phase.name(),
            self.lr,
            l.mse,
            l.feature,
            l.adversarial,
            l.triplet,
            l.total
        )
    }
}

fn adam_config(lr: f32, schedule: &TrainSchedule) -> AdamConfig {
    AdamConfig {
        lr,
        beta1: schedule.beta1,
        ..AdamConfig::default()
    }
}

fn finite(op: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Stage `n` training pair from a batch: the input is the `2^K` LR level
/// passed through the frozen stages `1..n`, the target is level `2^(K-n)`.
pub fn stage_pair(pipeline: &PipelineSpec, n: usize, batch: &Batch) -> Result<(Tensor, Tensor)> {
    let k = pipeline.num_stages();
    if !(1..=k).contains(&n) {
        return Err(Error::Config(format!("no stage {n} in a {k}-stage pipeline")));
    }
    if batch.levels.len() != k + 1 {
        return Err(Error::Contract(format!(
            "batch carries {} levels, a {k}-stage pipeline needs {}",
            batch.levels.len(),
            k + 1
        )));
    }
    if let Some(open) = pipeline.stages[..n - 1].iter().find(|s| !s.frozen) {
        return Err(Error::Contract(format!(
            "stage {} must be frozen before stage {n} trains",
            open.index
        )));
    }
    if pipeline.stages[n - 1].frozen {
        return Err(Error::Contract(format!("stage {n} is frozen")));
    }
    let input = pipeline.chain(&batch.levels[k], n - 1)?;
    Ok((input, batch.levels[k - n].clone()))
}

/// One Adam step of the generator on the pixel loss alone.
pub fn pretrain_step(stage: &mut StageSpec, input: &Tensor, target: &Tensor, lr: f32, schedule: &TrainSchedule) -> Result<LossBreakdown> {
    if stage.frozen {
        return Err(Error::Contract(format!("stage {} is frozen", stage.index)));
    }
    let mut tape = Tape::<f32>::new();
    let net = stage.generator.params.bind(&mut tape, true);
    let x = tape.constant(input.clone());
    let y = tape.constant(target.clone());
    let mut pass = Pass::train();
    let sr = generator_forward(&mut tape, &net, &stage.generator.config, x, &mut pass)?;
    let loss = mse_loss(&mut tape, sr, y)?;
    let mse = finite("mse_loss", tape.value(loss).item()? as f64)?;
    let grads = net.gradients(&tape.backward(loss)?);
    drop(net);
    stage.g_adam.config = adam_config(lr, schedule);
    stage.g_adam.step(&mut stage.generator.params, &grads)?;
    stage.generator.params.commit_batch_stats(&pass.into_updates())?;
    Ok(LossBreakdown {
        mse,
        total: mse,
        ..LossBreakdown::default()
    })
}

/// One adversarial iteration of stage `n`: a discriminator step on real
/// targets against the current generator's outputs, then a generator step
/// on the full stage loss against the updated discriminator. Returns the
/// generator loss breakdown and the discriminator loss.
pub fn gan_step(
    pipeline: &mut PipelineSpec,
    n: usize,
    input: &Tensor,
    target: &Tensor,
    lr: f32,
    schedule: &TrainSchedule,
) -> Result<(LossBreakdown, f64)> {
    let PipelineSpec {
        stages,
        extractor,
        weights,
        ..
    } = pipeline;
    let stage = &mut stages[n - 1];
    if stage.frozen {
        return Err(Error::Contract(format!("stage {n} is frozen")));
    }
    let config = adam_config(lr, schedule);
    let sr_prev = (n >= 2).then(|| input.clone());

    let mut tape = Tape::<f32>::new();
    let g_net = stage.generator.params.bind(&mut tape, true);
    let x = tape.constant(input.clone());
    let mut g_pass = Pass::train();
    let sr = generator_forward(&mut tape, &g_net, &stage.generator.config, x, &mut g_pass)?;

    // Discriminator step on a detached copy of the generated batch.
    let d_loss = {
        let mut d_tape = Tape::<f32>::new();
        let d_net = stage.discriminator.params.bind(&mut d_tape, true);
        let real = d_tape.constant(target.clone());
        let fake = d_tape.constant(tape.value(sr).clone());
        let d_cfg = &stage.discriminator.config;
        let (mut real_pass, mut fake_pass) = (Pass::train(), Pass::train());
        let d_real = discriminator_forward(&mut d_tape, &d_net, d_cfg, real, &mut real_pass)?;
        let d_fake = discriminator_forward(&mut d_tape, &d_net, d_cfg, fake, &mut fake_pass)?;
        let loss = discriminator_loss(&mut d_tape, d_real, d_fake)?;
        let value = finite("discriminator_loss", d_tape.value(loss).item()? as f64)?;
        let grads = d_net.gradients(&d_tape.backward(loss)?);
        drop(d_net);
        let mut updates = real_pass.into_updates();
        updates.extend(fake_pass.into_updates());
        stage.d_adam.config = config;
        stage.d_adam.step(&mut stage.discriminator.params, &grads)?;
        stage.discriminator.params.commit_batch_stats(&updates)?;
        value
    };

    // Generator step; the discriminator is a fixed function here and its
    // batch statistics from this pass are discarded.
    let d_net = stage.discriminator.params.bind(&mut tape, false);
    let d_out = discriminator_forward(&mut tape, &d_net, &stage.discriminator.config, sr, &mut Pass::train())?;
    let e_net = extractor.bind(&mut tape);
    let hr = tape.constant(target.clone());
    let input = StageLossInput {
        stage: n,
        sr,
        sr_prev: sr_prev.as_ref(),
        hr,
        d_fake: d_out,
    };
    let (total, breakdown) = stage_loss(&mut tape, input, extractor, &e_net, weights)?;
    finite("stage_loss", breakdown.total)?;
    let grads = g_net.gradients(&tape.backward(total)?);
    drop((g_net, d_net, e_net));
    stage.g_adam.config = config;
    stage.g_adam.step(&mut stage.generator.params, &grads)?;
    stage.generator.params.commit_batch_stats(&g_pass.into_updates())?;
    Ok((breakdown, d_loss))
}

/// Generator pretraining of stage `n` for `schedule.pretrain_iters` steps.
pub fn pretrain_stage(
    pipeline: &mut PipelineSpec,
    n: usize,
    stream: &mut PatchStream<'_>,
    schedule: &TrainSchedule,
) -> Result<Vec<IterRecord>> {
    schedule.validate()?;
    (0..schedule.pretrain_iters)
        .map(|i| {
            let batch = stream.next_batch(schedule.batch_size)?;
            let (input, target) = stage_pair(pipeline, n, &batch)?;
            let loss = pretrain_step(&mut pipeline.stages[n - 1], &input, &target, schedule.pretrain_lr, schedule)?;
            Ok(IterRecord {
                iteration: i as u64,
                stage: n,
                phase: Phase::Pretrain,
                lr: schedule.pretrain_lr,
                loss,
                d_loss: None,
            })
        })
        .collect()
}

/// Both adversarial phases of stage `n`. The generator optimizer restarts
/// from zero moments when adversarial training begins.
pub fn train_stage(
    pipeline: &mut PipelineSpec,
    n: usize,
    stream: &mut PatchStream<'_>,
    schedule: &TrainSchedule,
) -> Result<Vec<IterRecord>> {
    schedule.validate()?;
    let mut history = Vec::new();
    for (phase, iters) in [(Phase::GanPhase1, schedule.gan_iters_phase1), (Phase::GanPhase2, schedule.gan_iters_phase2)] {
        for i in 0..iters {
            if phase == Phase::GanPhase1 && i == 0 {
                let stage = &mut pipeline.stages[n - 1];
                stage.g_adam = AdamState::new(&stage.generator.params, adam_config(schedule.gan_lr_phase1, schedule));
            }
            let batch = stream.next_batch(schedule.batch_size)?;
            let (input, target) = stage_pair(pipeline, n, &batch)?;
            let lr = schedule.lr(phase);
            let (loss, d) = gan_step(pipeline, n, &input, &target, lr, schedule)?;
            history.push(IterRecord {
                iteration: (schedule.pretrain_iters + history.len()) as u64,
                stage: n,
                phase,
                lr,
                loss,
                d_loss: Some(d),
            });
        }
    }
    Ok(history)
}

/// Resumable progressive training: stage 1 fully (pretraining then both
/// adversarial phases), freeze it, then stage 2 on stage-1 outputs, and so
/// on. All state needed to continue lives in [`Trainer::checkpoint`].
pub struct Trainer<'d> {
    pipeline: PipelineSpec,
    schedule: TrainSchedule,
    stream: PatchStream<'d>,
    iteration: u64,
}

impl<'d> Trainer<'d> {
    pub fn new(pipeline: PipelineSpec, schedule: TrainSchedule, data: &'d Dataset) -> Result<Self> {
        Self::check(&pipeline, &schedule, data)?;
        let stream = data.stream(schedule.seed);
        let mut t = Self {
            pipeline,
            schedule,
            stream,
            iteration: 0,
        };
        t.sync_frozen();
        Ok(t)
    }

    /// Continue from a checkpoint written by [`Trainer::checkpoint`] for a
    /// pipeline of the same architecture and the same schedule.
    pub fn resume(mut pipeline: PipelineSpec, schedule: TrainSchedule, data: &'d Dataset, ck: &Checkpoint) -> Result<Self> {
        Self::check(&pipeline, &schedule, data)?;
        if ck.rng.seed != schedule.seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with seed {}, schedule has {}",
                ck.rng.seed, schedule.seed
            )));
        }
        let total = (pipeline.num_stages() * schedule.stage_iters()) as u64;
        if ck.iteration > total {
            return Err(Error::Checkpoint(format!("checkpoint at iteration {} exceeds the schedule's {total}", ck.iteration)));
        }
        pipeline.read_from(ck)?;
        let stream = PatchStream::resume(data, schedule.seed, ck.rng.stream);
        let mut t = Self {
            pipeline,
            schedule,
            stream,
            iteration: ck.iteration,
        };
        t.sync_frozen();
        Ok(t)
    }

    fn check(pipeline: &PipelineSpec, schedule: &TrainSchedule, data: &Dataset) -> Result<()> {
        schedule.validate()?;
        if data.max_level() != pipeline.num_stages() || data.patch_size() != pipeline.hr_size {
            return Err(Error::Config(format!(
                "dataset yields {}px patches with {} levels; the pipeline needs {}px with {}",
                data.patch_size(),
                data.max_level(),
                pipeline.hr_size,
                pipeline.num_stages()
            )));
        }
        let channels = pipeline.stages[0].generator.config.input_channels;
        if data.channels() != channels {
            return Err(Error::Config(format!("dataset has {} channels, pipeline {channels}", data.channels())));
        }
        Ok(())
    }

    /// Stages before the current one are frozen; all are once training ends.
    fn sync_frozen(&mut self) {
        let current = self.position().map_or(usize::MAX, |(n, _, _)| n);
        for s in &mut self.pipeline.stages {
            s.frozen = s.index < current;
        }
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn total_iterations(&self) -> u64 {
        (self.pipeline.num_stages() * self.schedule.stage_iters()) as u64
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.total_iterations()
    }

    /// Stage (1-based), phase and offset within the phase of the next step.
    pub fn position(&self) -> Option<(usize, Phase, usize)> {
        let per = self.schedule.stage_iters() as u64;
        if per == 0 || self.is_finished() {
            return None;
        }
        let stage = (self.iteration / per) as usize + 1;
        let (phase, offset) = self.schedule.locate((self.iteration % per) as usize)?;
        Some((stage, phase, offset))
    }

    pub fn pipeline(&self) -> &PipelineSpec {
        &self.pipeline
    }

    pub fn schedule(&self) -> &TrainSchedule {
        &self.schedule
    }

    pub fn into_pipeline(self) -> PipelineSpec {
        self.pipeline
    }

    /// Run one iteration; `None` once the schedule is exhausted.
    pub fn step(&mut self) -> Result<Option<IterRecord>> {
        let Some((n, phase, offset)) = self.position() else {
            self.sync_frozen();
            return Ok(None);
        };
        let lr = self.schedule.lr(phase);
        if phase == Phase::GanPhase1 && offset == 0 {
            let stage = &mut self.pipeline.stages[n - 1];
            stage.g_adam = AdamState::new(&stage.generator.params, adam_config(lr, &self.schedule));
        }
        let batch = self.stream.next_batch(self.schedule.batch_size)?;
        let (input, target) = stage_pair(&self.pipeline, n, &batch)?;
        let (loss, d_loss) = match phase {
            Phase::Pretrain => {
                let l = pretrain_step(&mut self.pipeline.stages[n - 1], &input, &target, lr, &self.schedule)?;
                (l, None)
            }
            Phase::GanPhase1 | Phase::GanPhase2 => {
                let (l, d) = gan_step(&mut self.pipeline, n, &input, &target, lr, &self.schedule)?;
                (l, Some(d))
            }
        };
        let record = IterRecord {
            iteration: self.iteration,
            stage: n,
            phase,
            lr,
            loss,
            d_loss,
        };
        self.iteration += 1;
        self.sync_frozen();
        Ok(Some(record))
    }

    /// Step until finished or `max_steps` more iterations have run,
    /// reporting each record to `on_record`.
    pub fn run(&mut self, max_steps: Option<u64>, mut on_record: impl FnMut(&Self, &IterRecord) -> Result<()>) -> Result<Vec<IterRecord>> {
        let mut history = Vec::new();
        while max_steps.is_none_or(|m| (history.len() as u64) < m) {
            let Some(r) = self.step()? else { break };
            on_record(self, &r)?;
            history.push(r);
        }
        Ok(history)
    }

    /// Everything needed to continue this run bit-exactly.
    pub fn checkpoint(&self, config: &str) -> Checkpoint {
        let mut ck = Checkpoint {
            config: config.to_string(),
            iteration: self.iteration,
            rng: RngState {
                seed: self.schedule.seed,
                stream: self.stream.state(),
            },
            ..Checkpoint::default()
        };
        self.pipeline.write_to(&mut ck);
        ck
    }
}

/// Train every stage of `pipeline` in order; returns the trained pipeline
/// (all stages frozen) and the full history.
pub fn train_pipeline(pipeline: PipelineSpec, data: &Dataset, schedule: &TrainSchedule) -> Result<(PipelineSpec, Vec<IterRecord>)> {
    let mut trainer = Trainer::new(pipeline, schedule.clone(), data)?;
    let history = trainer.run(None, |_, _| Ok(()))?;
    Ok((trainer.into_pipeline(), history))
}

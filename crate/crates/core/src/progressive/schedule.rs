use crate::{Error, Result};

/// Training phase of one stage, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Generator alone on the pixel loss.
    Pretrain,
    /// Adversarial training at the first learning rate.
    GanPhase1,
    /// Adversarial training at the lowered learning rate.
    GanPhase2,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::GanPhase1 => "gan1",
            Phase::GanPhase2 => "gan2",
        }
    }

    pub fn is_adversarial(self) -> bool {
        self != Phase::Pretrain
    }
}

/// Per-stage iteration counts and learning rates; every stage runs the
/// same schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub pretrain_iters: usize,
    pub pretrain_lr: f32,
    pub gan_iters_phase1: usize,
    pub gan_lr_phase1: f32,
    pub gan_iters_phase2: usize,
    pub gan_lr_phase2: f32,
    pub beta1: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// Iterations between checkpoints written by front ends; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            pretrain_iters: 1000,
            pretrain_lr: 1e-4,
            gan_iters_phase1: 1000,
            gan_lr_phase1: 1e-4,
            gan_iters_phase2: 1000,
            gan_lr_phase2: 1e-5,
            beta1: 0.9,
            batch_size: 8,
            seed: 0,
            checkpoint_every: 500,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("pretrain_lr", self.pretrain_lr),
            ("gan_lr_phase1", self.gan_lr_phase1),
            ("gan_lr_phase2", self.gan_lr_phase2),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::Config(format!("beta1 must lie in [0, 1), got {}", self.beta1)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Iterations each stage takes.
    pub fn stage_iters(&self) -> usize {
        self.pretrain_iters + self.gan_iters_phase1 + self.gan_iters_phase2
    }

    pub fn lr(&self, phase: Phase) -> f32 {
        match phase {
            Phase::Pretrain => self.pretrain_lr,
            Phase::GanPhase1 => self.gan_lr_phase1,
            Phase::GanPhase2 => self.gan_lr_phase2,
        }
    }

    /// Phase and offset within it of iteration `i` of a stage.
    pub fn locate(&self, i: usize) -> Option<(Phase, usize)> {
        let mut rest = i;
        for (phase, n) in [
            (Phase::Pretrain, self.pretrain_iters),
            (Phase::GanPhase1, self.gan_iters_phase1),
            (Phase::GanPhase2, self.gan_iters_phase2),
        ] {
            if rest < n {
                return Some((phase, rest));
            }
            rest -= n;
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locate_walks_the_phases() {
        let s = TrainSchedule { pretrain_iters: 2, gan_iters_phase1: 0, gan_iters_phase2: 3, ..TrainSchedule::default() };
        let seq: Vec<_> = (0..6).map(|i| s.locate(i)).collect();
        assert_eq!(
            seq,
            vec![
                Some((Phase::Pretrain, 0)),
                Some((Phase::Pretrain, 1)),
                Some((Phase::GanPhase2, 0)),
                Some((Phase::GanPhase2, 1)),
                Some((Phase::GanPhase2, 2)),
                None
            ]
        );
        assert_eq!(s.lr(Phase::GanPhase2), 1e-5);
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        assert!(TrainSchedule::default().validate().is_ok());
        assert!(TrainSchedule { pretrain_lr: 0.0, ..TrainSchedule::default() }.validate().is_err());
        assert!(TrainSchedule { beta1: 1.0, ..TrainSchedule::default() }.validate().is_err());
        assert!(TrainSchedule { batch_size: 0, ..TrainSchedule::default() }.validate().is_err());
    }
}

//! Stage-by-stage adversarial training of chained x2 generators and
//! multi-stage inference.
mod evaluate;
mod pipeline;
mod schedule;
mod trainer;

pub use evaluate::{holdout_report, mean_psnr, METHOD_BICUBIC, METHOD_BILINEAR, METHOD_PIPELINE};
pub use pipeline::{derive_seed, PipelineSpec, StageSpec, MAX_STAGES};
pub use schedule::{Phase, TrainSchedule};
pub use trainer::{
    gan_step, pretrain_stage, pretrain_step, stage_pair, train_pipeline, train_stage, IterRecord, Trainer, LOG_HEADER,
};
